//! Point-cloud topology: δ-neighborhood components, the shrinking
//! origin-component check, Hausdorff distance, and genus certificates for a
//! few explicitly constructed families of symmetric sets.
//!
//! Compact sets are stood in for by finite samples. Two points belong to the
//! same component of `N_δ(cloud)` exactly when a chain of open δ-balls links
//! them, i.e. when a path of edges `‖p − q‖ < 2δ` exists.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{enumerate_critical_set, ModelParams};
use crate::point::{Point, Space};

/// Points closer than this to the origin count as the origin.
pub const ORIGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cloud {
    pub points: Vec<Point>,
    /// Declared closed under negation.
    pub symmetric: bool,
}

impl Cloud {
    pub fn new(points: Vec<Point>, symmetric: bool) -> Self {
        Self { points, symmetric }
    }

    /// A cloud declared symmetric after checking that every negation is
    /// present within `1e-12`.
    pub fn symmetric(points: Vec<Point>) -> Result<Self> {
        let cloud = Self {
            points,
            symmetric: true,
        };
        if let Some(i) = cloud.unmatched_negation(1e-12) {
            return Err(Error::Precondition(format!("point {i} has no negation in the cloud")));
        }
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the first point whose negation is missing.
    pub fn unmatched_negation(&self, tol: f64) -> Option<usize> {
        (0..self.points.len()).find(|&i| {
            let neg = self.points[i].neg();
            !self.points.iter().any(|q| q.dist(&neg) <= tol)
        })
    }

    pub fn origin_index(&self) -> Option<usize> {
        self.points.iter().position(|p| p.norm() <= ORIGIN_TOL)
    }

    /// Distance from `p` to the nearest cloud point; infinite when empty.
    pub fn dist_to(&self, p: &Point) -> f64 {
        self.points.iter().map(|q| p.dist(q)).fold(f64::INFINITY, f64::min)
    }

    /// Coordinates as a JSON array of arrays.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<&[f64]> = self.points.iter().map(Point::coords).collect();
        Ok(serde_json::to_string(&rows)?)
    }

    pub fn from_json(space: Space, json: &str, symmetric: bool) -> Result<Self> {
        let rows: Vec<Vec<f64>> = serde_json::from_str(json)?;
        let points = rows
            .into_iter()
            .map(|r| Point::new(space, r))
            .collect::<Result<Vec<_>>>()?;
        if symmetric {
            Self::symmetric(points)
        } else {
            Ok(Self::new(points, false))
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Components of `N_δ(cloud)` as index lists, each sorted, ordered by their
/// smallest index.
///
/// Points are swept in order of their first coordinate. In both supported
/// spaces a difference in one coordinate bounds the distance from below, so
/// the inner loop can stop once that difference reaches `2δ`.
pub(crate) fn components_of(cloud: &Cloud, delta: f64) -> Vec<Vec<usize>> {
    let n = cloud.points.len();
    if n == 0 {
        return Vec::new();
    }
    let reach = 2.0 * delta;
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| cloud.points[i].coords().first().copied().unwrap_or(0.0);
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut uf = UnionFind::new(n);
    for (pos, &i) in order.iter().enumerate() {
        let xi = key(i);
        for &j in &order[pos + 1..] {
            if key(j) - xi >= reach {
                break;
            }
            if cloud.points[i].dist(&cloud.points[j]) < reach {
                uf.union(i, j);
            }
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut first_of_root: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = uf.find(i);
        let first = *first_of_root[r].get_or_insert(i);
        by_root.entry(first).or_default().push(i);
    }
    by_root.into_values().collect()
}

pub fn components(cloud: &Cloud, delta: f64) -> Result<Vec<Vec<usize>>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParams(format!("delta must be positive, got {delta}")));
    }
    Ok(components_of(cloud, delta))
}

/// Indices of the component containing the origin.
pub fn origin_component_indices(cloud: &Cloud, delta: f64) -> Result<Vec<usize>> {
    let origin = cloud.origin_index().ok_or(Error::OriginMissing)?;
    let parts = components(cloud, delta)?;
    parts
        .into_iter()
        .find(|p| p.contains(&origin))
        .ok_or_else(|| Error::Internal("origin not covered by the partition".into()))
}

/// Cloud points of the component of `N_δ(cloud)` that contains the origin.
pub fn component_of_origin(cloud: &Cloud, delta: f64) -> Result<Cloud> {
    let idx = origin_component_indices(cloud, delta)?;
    Ok(Cloud::new(
        idx.into_iter().map(|i| cloud.points[i].clone()).collect(),
        cloud.symmetric,
    ))
}

/// Breadth-first search from the origin over all pairs, independent of the
/// sweep used by [`components`].
fn origin_component_bfs(cloud: &Cloud, delta: f64, origin: usize) -> Vec<usize> {
    let n = cloud.points.len();
    let mut seen = vec![false; n];
    seen[origin] = true;
    let mut queue = VecDeque::from([origin]);
    while let Some(i) = queue.pop_front() {
        for (j, p) in cloud.points.iter().enumerate() {
            if !seen[j] && cloud.points[i].dist(p) < 2.0 * delta {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..n).filter(|&i| seen[i]).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma21Report {
    pub schedule: Vec<f64>,
    /// Origin component at each δ of the schedule.
    pub origin_components: Vec<Vec<usize>>,
    /// Every component is contained in the previous one.
    pub nested: bool,
    /// The origin component at the finest δ.
    pub stabilized: Vec<usize>,
    /// Largest δ of the schedule from which the component no longer changes.
    pub stabilized_from: f64,
    /// The finest component agrees with a brute-force search.
    pub matches_bfs: bool,
}

/// Shrinks δ along `schedule` and tracks the origin's component, checking
/// that the components are nested and that the last one agrees with a
/// brute-force search.
pub fn lemma21_check(cloud: &Cloud, schedule: &[f64]) -> Result<Lemma21Report> {
    if schedule.is_empty() {
        return Err(Error::EmptyInput("delta schedule"));
    }
    if schedule.iter().any(|d| !(*d > 0.0)) || schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParams(
            "delta schedule must be positive and strictly decreasing".into(),
        ));
    }
    let origin = cloud.origin_index().ok_or(Error::OriginMissing)?;
    let origin_components = schedule
        .iter()
        .map(|&d| origin_component_indices(cloud, d))
        .collect::<Result<Vec<_>>>()?;
    for (k, w) in origin_components.windows(2).enumerate() {
        // Both lists are sorted, so inclusion is a merge walk.
        let mut it = w[0].iter().peekable();
        for i in &w[1] {
            while it.peek().is_some_and(|j| *j < i) {
                it.next();
            }
            if it.peek() != Some(&i) {
                return Err(Error::Internal(format!(
                    "origin component at delta {} is not inside the one at delta {}",
                    schedule[k + 1],
                    schedule[k]
                )));
            }
        }
    }
    let stabilized = origin_components.last().cloned().unwrap_or_default();
    let first_stable = origin_components
        .iter()
        .rposition(|c| *c != stabilized)
        .map_or(0, |k| k + 1);
    let finest = *schedule.last().unwrap_or(&0.0);
    let matches_bfs = origin_component_bfs(cloud, finest, origin) == stabilized;
    Ok(Lemma21Report {
        schedule: schedule.to_vec(),
        origin_components,
        nested: true,
        stabilized,
        stabilized_from: schedule[first_stable],
        matches_bfs,
    })
}

/// `max(sup_a dist(a, B), sup_b dist(b, A))`.
pub fn hausdorff(a: &Cloud, b: &Cloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("cloud"));
    }
    let directed = |x: &Cloud, y: &Cloud| x.points.iter().map(|p| y.dist_to(p)).fold(0.0, f64::max);
    Ok(directed(a, b).max(directed(b, a)))
}

/// Critical set of the ℓ² model as a symmetric cloud: `N`, `−N` and the
/// segment `Z` sampled with the given spacing. The `Z` samples are placed
/// symmetrically so the origin is one of them exactly.
pub fn model_critical_cloud(params: ModelParams, z_spacing: f64) -> Result<Cloud> {
    if !(z_spacing > 0.0 && z_spacing <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "z spacing must lie in (0, 1], got {z_spacing}"
        )));
    }
    let half = (1.0 / z_spacing).ceil() as usize;
    let points = enumerate_critical_set(params, 2 * half + 1)?
        .into_iter()
        .map(|cp| cp.point)
        .collect();
    Ok(Cloud::new(points, true))
}

/// The sets for which a genus can be certified.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SetSpec {
    /// Sphere of the given radius in a `k`-dimensional subspace.
    CoordinateSphere {
        k: usize,
        radius: f64,
    },
    /// Finite symmetric set not containing the origin.
    FinitePairCloud(Cloud),
    Union(Box<SetSpec>, Box<SetSpec>),
    /// Closed `radius`-neighborhood of a finite symmetric cloud.
    SymmetricNeighborhood {
        cloud: Cloud,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenusCertificate {
    pub lower: usize,
    pub upper: usize,
    pub lower_witness: String,
    pub upper_witness: String,
}

/// Direction `(1, s, s², …)` that pairs nonzero with every cloud point.
/// For each point the pairing is a nonzero polynomial in `s`, so only
/// finitely many `s` fail.
fn separating_direction(cloud: &Cloud) -> Option<(f64, Vec<f64>)> {
    let dim = cloud.points.first()?.dim();
    let min_norm = cloud.points.iter().map(Point::norm).fold(f64::INFINITY, f64::min);
    (1..=4 * (cloud.len() + dim) + 8).find_map(|k| {
        let s = 1.0 + 0.37 * k as f64 / (1.0 + dim as f64);
        let w: Vec<f64> = (0..dim).map(|i| (s / 2.0).powi(i as i32)).collect();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ok = cloud.points.iter().all(|p| {
            let pair: f64 = p.coords().iter().zip(&w).map(|(a, b)| a * b).sum();
            pair.abs() > 1e-9 * wn * min_norm
        });
        ok.then_some((s, w))
    })
}

fn check_pair_cloud(cloud: &Cloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cloud"));
    }
    let min_norm = cloud.points.iter().map(Point::norm).fold(f64::INFINITY, f64::min);
    if min_norm <= ORIGIN_TOL {
        return Err(Error::NotInGenusFamily("the cloud contains the origin".into()));
    }
    if let Some(i) = cloud.unmatched_negation(1e-12) {
        return Err(Error::NotInGenusFamily(format!(
            "point {i} has no negation in the cloud"
        )));
    }
    Ok(min_norm)
}

fn pair_cloud_certificate(cloud: &Cloud) -> Result<GenusCertificate> {
    check_pair_cloud(cloud)?;
    let (s, _) = separating_direction(cloud).ok_or_else(|| Error::Internal("no separating direction found".into()))?;
    Ok(GenusCertificate {
        lower: 1,
        upper: 1,
        lower_witness: "nonempty set excluding the origin".into(),
        upper_witness: format!("odd map x -> <w, x> into R \\ {{0}}, w = (1, s/2, (s/2)^2, ...) at s = {s}"),
    })
}

pub fn genus_certificate(spec: &SetSpec) -> Result<GenusCertificate> {
    match spec {
        SetSpec::CoordinateSphere { k, radius } => {
            if *k < 1 {
                return Err(Error::InvalidParams("sphere dimension count must be at least 1".into()));
            }
            if !(*radius > 0.0) {
                return Err(Error::NotInGenusFamily(format!(
                    "sphere of radius {radius} does not exclude the origin"
                )));
            }
            Ok(GenusCertificate {
                lower: *k,
                upper: *k,
                lower_witness: format!("Borsuk-Ulam on S^{}", k - 1),
                upper_witness: format!("inclusion into R^{k} \\ {{0}}"),
            })
        }
        SetSpec::FinitePairCloud(cloud) => pair_cloud_certificate(cloud),
        SetSpec::Union(a, b) => {
            let (ca, cb) = (genus_certificate(a)?, genus_certificate(b)?);
            Ok(GenusCertificate {
                lower: ca.lower.max(cb.lower),
                upper: ca.upper + cb.upper,
                lower_witness: format!("monotonicity: max({}, {})", ca.lower_witness, cb.lower_witness),
                upper_witness: format!("subadditivity: {} + {}", ca.upper_witness, cb.upper_witness),
            })
        }
        SetSpec::SymmetricNeighborhood { cloud, radius } => {
            let min_norm = check_pair_cloud(cloud)?;
            if !(*radius >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "radius must be non-negative, got {radius}"
                )));
            }
            if *radius >= min_norm {
                return Err(Error::NotInGenusFamily(format!(
                    "radius {radius} reaches the origin (nearest point at {min_norm})"
                )));
            }
            if *radius >= 0.5 * min_norm {
                return Err(Error::NotInGenusFamily(format!(
                    "radius {radius} is not below half the origin distance {min_norm}; no certificate"
                )));
            }
            let base = pair_cloud_certificate(cloud)?;
            Ok(GenusCertificate {
                lower: base.lower,
                upper: base.upper,
                lower_witness: format!("contains the cloud: {}", base.lower_witness),
                upper_witness: format!(
                    "balls around p and -p are disjoint and odd-retract onto the cloud; {}",
                    base.upper_witness
                ),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Cloud {
        Cloud::new(xs.iter().map(|x| Point::l2(vec![*x]).unwrap()).collect(), false)
    }

    /// `{0} ∪ [0.5, 1]` sampled at 0.01.
    fn gap_cloud() -> Cloud {
        let mut xs = vec![0.0];
        xs.extend((0..=50).map(|i| 0.5 + i as f64 * 0.01));
        line(&xs)
    }

    #[test]
    fn gap_splits_at_small_delta() {
        let c = gap_cloud();
        let parts = components(&c, 0.1).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0], vec![0]);
        assert_eq!(parts[1].len(), 51);
        assert_eq!(components(&c, 0.3).unwrap().len(), 1);
    }

    #[test]
    fn singleton_and_empty() {
        assert_eq!(components(&line(&[2.0]), 0.1).unwrap(), vec![vec![0]]);
        assert!(components(&line(&[]), 0.1).unwrap().is_empty());
        assert!(components(&line(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn origin_component() {
        let c = gap_cloud();
        assert_eq!(component_of_origin(&c, 0.1).unwrap().len(), 1);
        assert!(matches!(
            component_of_origin(&line(&[1.0]), 0.1),
            Err(Error::OriginMissing)
        ));
        let z = line(&[0.0]);
        assert_eq!(component_of_origin(&z, 5.0).unwrap(), z);
    }

    #[test]
    fn lemma21_gap_cloud_stabilizes_to_origin() {
        let rep = lemma21_check(&gap_cloud(), &[0.3, 0.2, 0.1, 0.05]).unwrap();
        assert_eq!(rep.stabilized, vec![0]);
        assert_eq!(rep.origin_components[0].len(), 52);
        assert_eq!(rep.stabilized_from, 0.2);
        assert!(rep.nested && rep.matches_bfs);
    }

    #[test]
    fn schedule_validation() {
        let c = gap_cloud();
        assert!(lemma21_check(&c, &[0.1, 0.2]).is_err());
        assert!(lemma21_check(&c, &[0.1, 0.1]).is_err());
        assert!(lemma21_check(&c, &[]).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&line(&[0.0]), &line(&[3.0])).unwrap(), 3.0);
        assert_eq!(hausdorff(&line(&[0.0, 1.0]), &line(&[0.0])).unwrap(), 1.0);
        let c = gap_cloud();
        assert_eq!(hausdorff(&c, &c).unwrap(), 0.0);
        assert!(matches!(hausdorff(&c, &line(&[])), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn genus_catalog() {
        let g = genus_certificate(&SetSpec::CoordinateSphere { k: 3, radius: 0.5 }).unwrap();
        assert_eq!((g.lower, g.upper), (3, 3));

        let pair = Cloud::symmetric(vec![
            Point::l2(vec![1.0, 0.0]).unwrap(),
            Point::l2(vec![-1.0, 0.0]).unwrap(),
        ])
        .unwrap();
        let g = genus_certificate(&SetSpec::FinitePairCloud(pair.clone())).unwrap();
        assert_eq!((g.lower, g.upper), (1, 1));

        let u = SetSpec::Union(
            Box::new(SetSpec::CoordinateSphere { k: 2, radius: 1.0 }),
            Box::new(SetSpec::FinitePairCloud(pair.clone())),
        );
        let g = genus_certificate(&u).unwrap();
        assert_eq!((g.lower, g.upper), (2, 3));

        let g = genus_certificate(&SetSpec::SymmetricNeighborhood {
            cloud: pair.clone(),
            radius: 0.3,
        })
        .unwrap();
        assert_eq!((g.lower, g.upper), (1, 1));
        assert!(matches!(
            genus_certificate(&SetSpec::SymmetricNeighborhood {
                cloud: pair,
                radius: 1.5
            }),
            Err(Error::NotInGenusFamily(_))
        ));
    }

    #[test]
    fn genus_rejects_origin_and_asymmetry() {
        let with_origin = Cloud::new(vec![Point::l2(vec![0.0]).unwrap()], true);
        assert!(matches!(
            genus_certificate(&SetSpec::FinitePairCloud(with_origin)),
            Err(Error::NotInGenusFamily(_))
        ));
        let lopsided = line(&[1.0, 2.0, -1.0]);
        assert!(genus_certificate(&SetSpec::FinitePairCloud(lopsided)).is_err());
        assert!(genus_certificate(&SetSpec::CoordinateSphere { k: 2, radius: 0.0 }).is_err());
    }

    #[test]
    fn separating_direction_handles_orthogonal_pairs() {
        // Points orthogonal to (1, 1) and to e_1 alike.
        let pts = [[0.0, 1.0], [1.0, -1.0], [1.0, 0.0]];
        let mut all = Vec::new();
        for p in pts {
            all.push(Point::l2(p.to_vec()).unwrap());
            all.push(Point::l2(vec![-p[0], -p[1]]).unwrap());
        }
        let cloud = Cloud::symmetric(all).unwrap();
        assert!(genus_certificate(&SetSpec::FinitePairCloud(cloud)).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let c = Cloud::symmetric(vec![
            Point::l2(vec![0.5, -0.25]).unwrap(),
            Point::l2(vec![-0.5, 0.25]).unwrap(),
        ])
        .unwrap();
        let back = Cloud::from_json(Space::L2Truncation(2), &c.to_json().unwrap(), true).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn model_cloud_origin_is_exact() {
        let c = model_critical_cloud(ModelParams::new(2).unwrap(), 0.01).unwrap();
        assert_eq!(c.len(), 9 + 9 + 201);
        assert!(c.origin_index().is_some());
        assert!(c.unmatched_negation(1e-12).is_none());
    }
}
