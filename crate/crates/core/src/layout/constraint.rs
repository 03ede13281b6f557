//! Constraint vocabulary for box placement, the mapping from parsed
//! relations to constraints, and the name-keyed predicates used to grade
//! realized layouts.

use std::collections::{BTreeMap, BTreeSet};

use crate::directive::{Directive, RelationKind};

use super::{BBox, LayoutError, MIN_BOX_AREA};

/// Interactional closeness: maximum center distance as a fraction of the
/// canvas diagonal.
pub const PROXIMITY_RADIUS: f64 = 0.25;
/// Minimum IoU for a "wearing" pair.
pub const WEARING_MIN_IOU: f64 = 0.3;
/// Default box side as a fraction of the anchor (or canvas) side.
pub const DEFAULT_BOX_RATIO: f64 = 0.3;
/// Smallest allowed box side after the prior is applied.
pub const MIN_BOX_SIDE: f64 = 0.1;

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Less,
    Greater,
}

/// Either a box being solved for or a frozen scene box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoxRef {
    Var(usize),
    Fixed(BBox),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// The var's center coordinate lies strictly on one side of `bound`.
    HalfPlane { var: usize, axis: Axis, bound: f64, order: Order },
    /// Center distance between the two boxes is at most `max_dist`.
    Proximity { a: BoxRef, b: BoxRef, max_dist: f64 },
    /// The two boxes overlap with IoU at least `min_iou`.
    Overlap { a: BoxRef, b: BoxRef, min_iou: f64 },
    /// The var's box lies entirely inside `region`.
    Containment { var: usize, region: BBox },
    /// The two boxes have empty interior intersection.
    NoOverlap { a: BoxRef, b: BoxRef },
}

impl Constraint {
    fn resolve(r: &BoxRef, vars: &[BBox]) -> BBox {
        match r {
            BoxRef::Var(i) => vars[*i],
            BoxRef::Fixed(b) => *b,
        }
    }

    /// Evaluates the constraint on a full variable assignment.
    pub fn satisfied(&self, vars: &[BBox]) -> bool {
        match self {
            Constraint::HalfPlane { var, axis, bound, order } => {
                let (cx, cy) = vars[*var].center();
                let v = match axis {
                    Axis::X => cx,
                    Axis::Y => cy,
                };
                match order {
                    Order::Less => v < *bound,
                    Order::Greater => v > *bound,
                }
            }
            Constraint::Proximity { a, b, max_dist } => {
                let (a, b) = (Self::resolve(a, vars), Self::resolve(b, vars));
                a.center_distance(&b) <= max_dist + GEOM_TOL
            }
            Constraint::Overlap { a, b, min_iou } => {
                let (a, b) = (Self::resolve(a, vars), Self::resolve(b, vars));
                a.iou(&b) >= min_iou - GEOM_TOL
            }
            Constraint::Containment { var, region } => region.contains_box(&vars[*var]),
            Constraint::NoOverlap { a, b } => {
                let (a, b) = (Self::resolve(a, vars), Self::resolve(b, vars));
                a.intersection_area(&b) <= GEOM_TOL
            }
        }
    }

    fn references_valid(&self, var_count: usize) -> bool {
        let ref_ok = |r: &BoxRef| match r {
            BoxRef::Var(i) => *i < var_count,
            BoxRef::Fixed(_) => true,
        };
        match self {
            Constraint::HalfPlane { var, .. } | Constraint::Containment { var, .. } => {
                *var < var_count
            }
            Constraint::Proximity { a, b, .. }
            | Constraint::Overlap { a, b, .. }
            | Constraint::NoOverlap { a, b } => ref_ok(a) && ref_ok(b),
        }
    }
}

/// A box variable to solve for: its entity name and frozen size.
#[derive(Debug, Clone, PartialEq)]
pub struct VarSpec {
    pub name: String,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    vars: Vec<VarSpec>,
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(vars: Vec<VarSpec>, constraints: Vec<Constraint>) -> Result<Self, LayoutError> {
        if vars.is_empty() {
            return Err(LayoutError::InvalidDirective("no box variables".into()));
        }
        for v in &vars {
            if v.width * v.height < MIN_BOX_AREA - GEOM_TOL {
                return Err(LayoutError::InvalidBox(format!(
                    "{}: prior size {}x{} is below the minimum area",
                    v.name, v.width, v.height
                )));
            }
        }
        if let Some(c) = constraints.iter().find(|c| !c.references_valid(vars.len())) {
            return Err(LayoutError::InvalidDirective(format!(
                "constraint references an undeclared variable: {c:?}"
            )));
        }
        Ok(Self { vars, constraints })
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// The constraint list plus the implicit disjointness of every variable
    /// from every existing scene box, except pairs that some Overlap
    /// constraint explicitly wants intersecting.
    pub fn with_existing(&self, existing: &[BBox]) -> Vec<Constraint> {
        let mut all = self.constraints.clone();
        for v in 0..self.vars.len() {
            for b in existing {
                let wants_overlap = self.constraints.iter().any(|c| match c {
                    Constraint::Overlap { a: BoxRef::Var(i), b: BoxRef::Fixed(f), .. }
                    | Constraint::Overlap { a: BoxRef::Fixed(f), b: BoxRef::Var(i), .. } => {
                        *i == v && f == b
                    }
                    _ => false,
                });
                if !wants_overlap {
                    all.push(Constraint::NoOverlap { a: BoxRef::Var(v), b: BoxRef::Fixed(*b) });
                }
            }
        }
        all
    }
}

fn prior_size(base: Option<&BBox>) -> (f64, f64) {
    let (bw, bh) = base.map_or((1.0, 1.0), |b| (b.width(), b.height()));
    (
        (bw * DEFAULT_BOX_RATIO).clamp(MIN_BOX_SIDE, 1.0),
        (bh * DEFAULT_BOX_RATIO).clamp(MIN_BOX_SIDE, 1.0),
    )
}

fn spatial_constraints(
    lexeme: &str,
    var: usize,
    anchor: &BBox,
    canvas: &BBox,
) -> Result<Vec<Constraint>, LayoutError> {
    let (cx, cy) = anchor.center();
    let diag = (canvas.width().powi(2) + canvas.height().powi(2)).sqrt();
    Ok(match lexeme {
        "left of" => vec![Constraint::HalfPlane { var, axis: Axis::X, bound: cx, order: Order::Less }],
        "right of" => {
            vec![Constraint::HalfPlane { var, axis: Axis::X, bound: cx, order: Order::Greater }]
        }
        "above" | "on top of" => {
            vec![Constraint::HalfPlane { var, axis: Axis::Y, bound: cy, order: Order::Less }]
        }
        "below" | "under" => {
            vec![Constraint::HalfPlane { var, axis: Axis::Y, bound: cy, order: Order::Greater }]
        }
        "next to" => vec![Constraint::Proximity {
            a: BoxRef::Var(var),
            b: BoxRef::Fixed(*anchor),
            max_dist: PROXIMITY_RADIUS * diag,
        }],
        other => return Err(LayoutError::UnknownRelation(other.to_string())),
    })
}

/// Builds the constraint set for a synthesis directive. `anchors` maps
/// entity names of already-placed objects to their boxes; a relation
/// partner that is not in `anchors` becomes a second box variable.
pub fn relation_to_constraints(
    directive: &Directive,
    anchors: &BTreeMap<String, BBox>,
    canvas: &BBox,
) -> Result<ConstraintSet, LayoutError> {
    let (subject, relation, position) = match directive {
        Directive::Synthesis { subject, relation, position } => (subject, relation, position),
        other => {
            return Err(LayoutError::InvalidDirective(format!(
                "{} directives do not produce layouts",
                other.mode_name()
            )))
        }
    };

    let anchor_box = match position {
        Some((_, anchor)) => Some(
            *anchors
                .get(anchor.name())
                .ok_or_else(|| LayoutError::MissingAnchor(anchor.name().to_string()))?,
        ),
        None => None,
    };
    let (w, h) = prior_size(anchor_box.as_ref());

    let mut vars = vec![VarSpec { name: subject.name().to_string(), width: w, height: h }];
    let mut constraints = Vec::new();

    if let Some((rel, partner)) = relation {
        debug_assert_eq!(rel.kind(), RelationKind::Interactional);
        let partner_ref = match anchors.get(partner.name()) {
            Some(b) => BoxRef::Fixed(*b),
            None => {
                vars.push(VarSpec { name: partner.name().to_string(), width: w, height: h });
                BoxRef::Var(1)
            }
        };
        let diag = (canvas.width().powi(2) + canvas.height().powi(2)).sqrt();
        constraints.push(Constraint::Proximity {
            a: BoxRef::Var(0),
            b: partner_ref,
            max_dist: PROXIMITY_RADIUS * diag,
        });
        if rel.lexeme() == "wearing" {
            constraints.push(Constraint::Overlap {
                a: BoxRef::Var(0),
                b: partner_ref,
                min_iou: WEARING_MIN_IOU,
            });
        } else if matches!(partner_ref, BoxRef::Var(_)) {
            constraints.push(Constraint::NoOverlap { a: BoxRef::Var(0), b: partner_ref });
        }
    }

    if let Some((rel, _)) = position {
        let anchor = anchor_box.expect("anchor box resolved above");
        for var in 0..vars.len() {
            constraints.extend(spatial_constraints(rel.lexeme(), var, &anchor, canvas)?);
        }
    }

    for var in 0..vars.len() {
        constraints.push(Constraint::Containment { var, region: *canvas });
    }

    ConstraintSet::new(vars, constraints)
}

/// A named predicate over realized entity boxes.
#[derive(Debug, Clone, PartialEq)]
pub enum RelationPredicate {
    HalfPlane { subject: String, anchor: String, axis: Axis, order: Order },
    Proximity { a: String, b: String, max_dist: f64 },
    Overlap { a: String, b: String, min_iou: f64 },
}

impl RelationPredicate {
    pub fn holds(&self, boxes: &BTreeMap<String, BBox>) -> Result<bool, LayoutError> {
        let get = |name: &str| {
            boxes.get(name).copied().ok_or_else(|| LayoutError::MissingLayout(name.to_string()))
        };
        Ok(match self {
            RelationPredicate::HalfPlane { subject, anchor, axis, order } => {
                let (scx, scy) = get(subject)?.center();
                let (acx, acy) = get(anchor)?.center();
                let (s, a) = match axis {
                    Axis::X => (scx, acx),
                    Axis::Y => (scy, acy),
                };
                match order {
                    Order::Less => s < a,
                    Order::Greater => s > a,
                }
            }
            RelationPredicate::Proximity { a, b, max_dist } => {
                get(a)?.center_distance(&get(b)?) <= max_dist + GEOM_TOL
            }
            RelationPredicate::Overlap { a, b, min_iou } => {
                get(a)?.iou(&get(b)?) >= min_iou - GEOM_TOL
            }
        })
    }
}

/// One graded relation from a directive: every predicate must hold for the
/// relation to count as correctly realized.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationCheck {
    pub description: String,
    pub predicates: Vec<RelationPredicate>,
}

impl RelationCheck {
    pub fn holds(&self, boxes: &BTreeMap<String, BBox>) -> Result<bool, LayoutError> {
        for p in &self.predicates {
            if !p.holds(boxes)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Every entity name the check's predicates mention.
    pub fn entities(&self) -> BTreeSet<&str> {
        let mut names = BTreeSet::new();
        for p in &self.predicates {
            match p {
                RelationPredicate::HalfPlane { subject, anchor, .. } => {
                    names.insert(subject.as_str());
                    names.insert(anchor.as_str());
                }
                RelationPredicate::Proximity { a, b, .. }
                | RelationPredicate::Overlap { a, b, .. } => {
                    names.insert(a.as_str());
                    names.insert(b.as_str());
                }
            }
        }
        names
    }
}

/// The gradeable relations a directive states: one check per spatial
/// position and one per interactional relation. Non-synthesis directives
/// state none.
pub fn relation_groups(directive: &Directive) -> Result<Vec<RelationCheck>, LayoutError> {
    let (subject, relation, position) = match directive {
        Directive::Synthesis { subject, relation, position } => (subject, relation, position),
        _ => return Ok(vec![]),
    };
    let unit_diag = std::f64::consts::SQRT_2;
    let mut checks = Vec::new();

    if let Some((rel, partner)) = relation {
        let mut predicates = vec![RelationPredicate::Proximity {
            a: subject.name().to_string(),
            b: partner.name().to_string(),
            max_dist: PROXIMITY_RADIUS * unit_diag,
        }];
        if rel.lexeme() == "wearing" {
            predicates.push(RelationPredicate::Overlap {
                a: subject.name().to_string(),
                b: partner.name().to_string(),
                min_iou: WEARING_MIN_IOU,
            });
        }
        checks.push(RelationCheck {
            description: format!("{} {} {}", subject.name(), rel.lexeme(), partner.name()),
            predicates,
        });
    }

    if let Some((rel, anchor)) = position {
        let mut positioned = vec![subject.name().to_string()];
        if let Some((_, partner)) = relation {
            positioned.push(partner.name().to_string());
        }
        let mut predicates = Vec::new();
        for name in &positioned {
            predicates.extend(match rel.lexeme() {
                "left of" => vec![RelationPredicate::HalfPlane {
                    subject: name.clone(),
                    anchor: anchor.name().to_string(),
                    axis: Axis::X,
                    order: Order::Less,
                }],
                "right of" => vec![RelationPredicate::HalfPlane {
                    subject: name.clone(),
                    anchor: anchor.name().to_string(),
                    axis: Axis::X,
                    order: Order::Greater,
                }],
                "above" | "on top of" => vec![RelationPredicate::HalfPlane {
                    subject: name.clone(),
                    anchor: anchor.name().to_string(),
                    axis: Axis::Y,
                    order: Order::Less,
                }],
                "below" | "under" => vec![RelationPredicate::HalfPlane {
                    subject: name.clone(),
                    anchor: anchor.name().to_string(),
                    axis: Axis::Y,
                    order: Order::Greater,
                }],
                "next to" => vec![RelationPredicate::Proximity {
                    a: name.clone(),
                    b: anchor.name().to_string(),
                    max_dist: PROXIMITY_RADIUS * unit_diag,
                }],
                other => return Err(LayoutError::UnknownRelation(other.to_string())),
            });
        }
        checks.push(RelationCheck {
            description: format!(
                "{} {} {}",
                positioned.join(" and "),
                rel.lexeme(),
                anchor.name()
            ),
            predicates,
        });
    }

    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directive::parse_directive;
    use approx::assert_relative_eq;

    fn anchors(entries: &[(&str, BBox)]) -> BTreeMap<String, BBox> {
        entries.iter().map(|(n, b)| (n.to_string(), *b)).collect()
    }

    #[test]
    fn position_maps_to_halfplane_and_containment() {
        let d = parse_directive("add a cat right of the yard").unwrap();
        let yard = BBox::new(0.1, 0.1, 0.5, 0.5).unwrap();
        let set =
            relation_to_constraints(&d, &anchors(&[("yard", yard)]), &BBox::CANVAS).unwrap();
        assert_eq!(set.vars().len(), 1);
        assert!(set.constraints().iter().any(|c| matches!(
            c,
            Constraint::HalfPlane { var: 0, axis: Axis::X, order: Order::Greater, bound }
                if (*bound - 0.3).abs() < 1e-12
        )));
        assert!(set
            .constraints()
            .iter()
            .any(|c| matches!(c, Constraint::Containment { var: 0, .. })));
    }

    #[test]
    fn conjunct_relation_maps_to_proximity() {
        let d = parse_directive("a cat and a dog play together").unwrap();
        let set = relation_to_constraints(&d, &BTreeMap::new(), &BBox::CANVAS).unwrap();
        assert_eq!(set.vars().len(), 2);
        let prox = set
            .constraints()
            .iter()
            .find_map(|c| match c {
                Constraint::Proximity { max_dist, .. } => Some(*max_dist),
                _ => None,
            })
            .unwrap();
        assert_relative_eq!(prox, 0.25 * std::f64::consts::SQRT_2);
        assert!(set
            .constraints()
            .iter()
            .any(|c| matches!(c, Constraint::NoOverlap { a: BoxRef::Var(0), b: BoxRef::Var(1) })));
    }

    #[test]
    fn bare_subject_gets_containment_only() {
        let d = parse_directive("add a cat").unwrap();
        let set = relation_to_constraints(&d, &BTreeMap::new(), &BBox::CANVAS).unwrap();
        assert_eq!(set.vars().len(), 1);
        assert_eq!(set.constraints().len(), 1);
        assert!(matches!(set.constraints()[0], Constraint::Containment { .. }));
        assert_relative_eq!(set.vars()[0].width, 0.3);
    }

    #[test]
    fn wearing_adds_overlap_and_skips_pair_disjointness() {
        let d = parse_directive("a dog wearing a hat").unwrap();
        let set = relation_to_constraints(&d, &BTreeMap::new(), &BBox::CANVAS).unwrap();
        assert!(set
            .constraints()
            .iter()
            .any(|c| matches!(c, Constraint::Overlap { min_iou, .. } if *min_iou == WEARING_MIN_IOU)));
        assert!(!set.constraints().iter().any(|c| matches!(c, Constraint::NoOverlap { .. })));
    }

    #[test]
    fn missing_anchor_is_reported() {
        let d = parse_directive("add a cat left of the sofa").unwrap();
        match relation_to_constraints(&d, &BTreeMap::new(), &BBox::CANVAS) {
            Err(LayoutError::MissingAnchor(name)) => assert_eq!(name, "sofa"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn existing_partner_is_fixed() {
        let d = parse_directive("a cat playing with the dog").unwrap();
        let dog = BBox::new(0.6, 0.6, 0.9, 0.9).unwrap();
        let set = relation_to_constraints(&d, &anchors(&[("dog", dog)]), &BBox::CANVAS).unwrap();
        assert_eq!(set.vars().len(), 1);
        assert!(set.constraints().iter().any(|c| matches!(
            c,
            Constraint::Proximity { a: BoxRef::Var(0), b: BoxRef::Fixed(f), .. } if *f == dog
        )));
    }

    #[test]
    fn auto_disjointness_spares_overlap_partners() {
        let d = parse_directive("a hat wearing the dog").unwrap();
        let dog = BBox::new(0.3, 0.3, 0.6, 0.6).unwrap();
        let other = BBox::new(0.7, 0.7, 0.9, 0.9).unwrap();
        let set = relation_to_constraints(&d, &anchors(&[("dog", dog)]), &BBox::CANVAS).unwrap();
        let all = set.with_existing(&[dog, other]);
        let no_overlaps: Vec<_> =
            all.iter().filter(|c| matches!(c, Constraint::NoOverlap { .. })).collect();
        assert_eq!(no_overlaps.len(), 1, "only the unrelated box gets disjointness: {all:?}");
        assert!(matches!(
            no_overlaps[0],
            Constraint::NoOverlap { b: BoxRef::Fixed(f), .. } if *f == other
        ));
    }

    #[test]
    fn predicate_grading() {
        let d = parse_directive("a cat and a dog play together right of the yard").unwrap();
        let checks = relation_groups(&d).unwrap();
        assert_eq!(checks.len(), 2);

        let mut boxes = anchors(&[
            ("yard", BBox::new(0.0, 0.3, 0.4, 0.7).unwrap()),
            ("cat", BBox::new(0.5, 0.2, 0.7, 0.4).unwrap()),
            ("dog", BBox::new(0.6, 0.5, 0.8, 0.7).unwrap()),
        ]);
        assert!(checks[0].holds(&boxes).unwrap());
        assert!(checks[1].holds(&boxes).unwrap());

        boxes.insert("cat".into(), BBox::new(0.0, 0.0, 0.1, 0.1).unwrap());
        assert!(!checks[0].holds(&boxes).unwrap(), "cat drifted far from dog");
        assert!(!checks[1].holds(&boxes).unwrap(), "cat no longer right of yard");

        boxes.remove("dog");
        assert!(matches!(checks[0].holds(&boxes), Err(LayoutError::MissingLayout(_))));
    }

    #[test]
    fn editing_and_erasing_state_no_relations() {
        let d = parse_directive("change the cat to a rabbit").unwrap();
        assert!(relation_groups(&d).unwrap().is_empty());
        assert!(relation_to_constraints(&d, &BTreeMap::new(), &BBox::CANVAS).is_err());
    }
}
