//! Module hubs: K-prototype clustering of task encodings, each prototype
//! owning one neural module.
//!
//! The mixed dissimilarity is the Euclidean distance on Feature A plus
//! `gamma` times the mismatch count over Features B, C (whole triples) and D.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::TaskKind;
use crate::encode::{StructureTriple, TaskEncoding, DEFAULT_C_MAX};
use crate::plan::OperatorKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HubError {
    #[error("encoding shape mismatch: {0}")]
    Shape(String),
    #[error("cannot fit a hub on an empty task list")]
    EmptyTasks,
    #[error("hub needs at least one prototype")]
    NoPrototypes,
}

/// Which task family a hub serves.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HubKind {
    Break(OperatorKind),
    Oth,
}

impl HubKind {
    pub fn for_task(kind: &TaskKind) -> HubKind {
        match kind {
            TaskKind::BreakRooted(op) => HubKind::Break(op.clone()),
            TaskKind::Remainder => HubKind::Oth,
        }
    }
}

impl fmt::Display for HubKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HubKind::Break(op) => write!(f, "{op}"),
            HubKind::Oth => f.write_str("OTH"),
        }
    }
}

/// Handle of a module's parameters in the model's module store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModuleId(pub u32);

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Seeded farthest-point choice among training tasks.
    #[default]
    FarthestPoint,
    /// Uniform random Feature A, categorical parts copied from random tasks.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HubParams {
    pub gamma: f64,
    /// `None` until set explicitly or derived after the initial fit.
    pub theta_new: Option<f64>,
    pub m_min: usize,
    pub c_max: usize,
    /// Treat Feature B as numeric (Euclidean, mean update) instead of categorical.
    pub b_numeric: bool,
    pub init: InitMode,
    /// Percentile of training min-dissimilarities used when deriving `theta_new`.
    pub theta_percentile: f64,
}

impl Default for HubParams {
    fn default() -> Self {
        HubParams {
            gamma: 0.5,
            theta_new: None,
            m_min: 2,
            c_max: DEFAULT_C_MAX,
            b_numeric: false,
            init: InitMode::FarthestPoint,
            theta_percentile: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPrototype {
    pub centroid_a: Vec<f64>,
    pub centroid_b: Vec<f64>,
    /// Padded to `c_max`.
    pub centroid_c: Vec<StructureTriple>,
    pub centroid_d: [u8; 4],
    pub member_count: usize,
    pub module: ModuleId,
}

impl ClusterPrototype {
    pub fn from_encoding(x: &TaskEncoding, c_max: usize, module: ModuleId) -> Self {
        ClusterPrototype {
            centroid_a: x.a.clone(),
            centroid_b: x.b.iter().map(|&v| v as f64).collect(),
            centroid_c: x.c_padded(c_max),
            centroid_d: x.d,
            member_count: 0,
            module,
        }
    }
}

fn check_shapes(x: &TaskEncoding, c: &ClusterPrototype) -> Result<(), HubError> {
    if x.a.len() != c.centroid_a.len() {
        return Err(HubError::Shape(format!(
            "feature A has {} slots, prototype has {}",
            x.a.len(),
            c.centroid_a.len()
        )));
    }
    if x.b.len() != c.centroid_b.len() {
        return Err(HubError::Shape(format!(
            "feature B has {} slots, prototype has {}",
            x.b.len(),
            c.centroid_b.len()
        )));
    }
    if x.c.len() > c.centroid_c.len() {
        return Err(HubError::Shape(format!(
            "feature C has {} triples, prototype holds {}",
            x.c.len(),
            c.centroid_c.len()
        )));
    }
    Ok(())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Numeric and categorical parts of the dissimilarity, before weighting.
fn parts(x: &TaskEncoding, c: &ClusterPrototype, b_numeric: bool) -> (f64, f64) {
    let mut num = euclid(&x.a, &c.centroid_a);
    let mut cat = 0usize;
    if b_numeric {
        let xb: Vec<f64> = x.b.iter().map(|&v| v as f64).collect();
        num += euclid(&xb, &c.centroid_b);
    } else {
        cat += x
            .b
            .iter()
            .zip(&c.centroid_b)
            .filter(|(v, m)| **v as f64 != **m)
            .count();
    }
    const ZERO: StructureTriple = [0, 0, 0];
    cat += c
        .centroid_c
        .iter()
        .enumerate()
        .filter(|(i, m)| x.c.get(*i).unwrap_or(&ZERO) != *m)
        .count();
    cat += x.d.iter().zip(&c.centroid_d).filter(|(a, b)| a != b).count();
    (num, cat as f64)
}

/// Mixed dissimilarity between a task and a prototype (categorical Feature B).
pub fn dissimilarity(x: &TaskEncoding, c: &ClusterPrototype, gamma: f64) -> Result<f64, HubError> {
    dissimilarity_with(x, c, gamma, false)
}

pub fn dissimilarity_with(
    x: &TaskEncoding,
    c: &ClusterPrototype,
    gamma: f64,
    b_numeric: bool,
) -> Result<f64, HubError> {
    check_shapes(x, c)?;
    let (num, cat) = parts(x, c, b_numeric);
    Ok(num + gamma * cat)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every assignment step and every update step, in order.
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaintenanceAction {
    /// Task is close enough to an existing prototype.
    Keep { index: usize, dissimilarity: f64 },
    /// A new prototype was appended with the task as its centroid.
    Created {
        index: usize,
        module: ModuleId,
        nearest_module: ModuleId,
        dissimilarity: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleHub {
    pub kind: HubKind,
    pub prototypes: Vec<ClusterPrototype>,
    pub params: HubParams,
}

/// Most frequent value, ties broken toward the smallest value.
fn mode<T: Ord + Copy>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut v: Vec<T> = values.collect();
    v.sort_unstable();
    let mut best: Option<(T, usize)> = None;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        if best.is_none_or(|(_, n)| j - i > n) {
            best = Some((v[i], j - i));
        }
        i = j;
    }
    best.map(|(x, _)| x)
}

impl ModuleHub {
    /// A hub with prototypes not yet placed; call [`ModuleHub::initialize`].
    pub fn new(kind: HubKind, params: HubParams) -> Self {
        ModuleHub {
            kind,
            prototypes: Vec::new(),
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dissimilarity(&self, x: &TaskEncoding, index: usize) -> Result<f64, HubError> {
        dissimilarity_with(x, &self.prototypes[index], self.params.gamma, self.params.b_numeric)
    }

    /// Argmin prototype (ties to the lowest index) and its dissimilarity.
    pub fn nearest(&self, x: &TaskEncoding) -> Result<(usize, f64), HubError> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.prototypes.len() {
            let d = self.dissimilarity(x, i)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.ok_or(HubError::NoPrototypes)
    }

    pub fn select_module(&self, x: &TaskEncoding) -> Result<(usize, ModuleId), HubError> {
        let (i, _) = self.nearest(x)?;
        Ok((i, self.prototypes[i].module))
    }

    pub fn objective(&self, tasks: &[TaskEncoding], assignments: &[usize]) -> Result<f64, HubError> {
        tasks
            .iter()
            .zip(assignments)
            .map(|(x, &k)| self.dissimilarity(x, k))
            .sum()
    }

    /// Places `k` prototypes from the training tasks. `alloc` hands out a
    /// fresh module for every prototype.
    pub fn initialize<R: Rng>(
        &mut self,
        tasks: &[TaskEncoding],
        k: usize,
        rng: &mut R,
        mut alloc: impl FnMut() -> ModuleId,
    ) -> Result<(), HubError> {
        if tasks.is_empty() {
            return Err(HubError::EmptyTasks);
        }
        let k = k.max(1);
        let c_max = self.params.c_max;
        self.prototypes.clear();
        match self.params.init {
            InitMode::FarthestPoint => {
                let first = rng.gen_range(0..tasks.len());
                self.prototypes
                    .push(ClusterPrototype::from_encoding(&tasks[first], c_max, alloc()));
                while self.prototypes.len() < k {
                    let mut far = (first, -1.0);
                    for (i, x) in tasks.iter().enumerate() {
                        let (_, d) = self.nearest(x)?;
                        if d > far.1 {
                            far = (i, d);
                        }
                    }
                    self.prototypes
                        .push(ClusterPrototype::from_encoding(&tasks[far.0], c_max, alloc()));
                }
            }
            InitMode::Random => {
                for _ in 0..k {
                    let src = tasks.choose(rng).expect("non-empty");
                    let mut p = ClusterPrototype::from_encoding(src, c_max, alloc());
                    p.centroid_a.iter_mut().for_each(|v| *v = rng.gen::<f64>());
                    self.prototypes.push(p);
                }
            }
        }
        for x in tasks {
            check_shapes(x, &self.prototypes[0])?;
        }
        Ok(())
    }

    fn assign(&self, tasks: &[TaskEncoding]) -> Result<Vec<usize>, HubError> {
        tasks.iter().map(|x| self.nearest(x).map(|(i, _)| i)).collect()
    }

    /// Sets member counts from an argmin assignment of `tasks`.
    pub fn recount(&mut self, tasks: &[TaskEncoding]) -> Result<Vec<usize>, HubError> {
        let assignments = self.assign(tasks)?;
        self.set_counts(&assignments);
        Ok(assignments)
    }

    fn set_counts(&mut self, assignments: &[usize]) {
        for p in &mut self.prototypes {
            p.member_count = 0;
        }
        for &k in assignments {
            self.prototypes[k].member_count += 1;
        }
    }

    /// Recomputes one prototype from its members. Categorical slots take the
    /// per-position mode. Feature A takes the member mean unless the mean has
    /// a larger summed distance than the current centroid, which keeps the
    /// objective from increasing.
    fn update_prototype(&mut self, k: usize, members: &[&TaskEncoding]) {
        if members.is_empty() {
            return;
        }
        let m = members.len() as f64;
        let c_max = self.params.c_max;
        let b_numeric = self.params.b_numeric;
        let proto = &mut self.prototypes[k];

        let n = proto.centroid_a.len();
        let mean: Vec<f64> = (0..n)
            .map(|j| members.iter().map(|x| x.a[j]).sum::<f64>() / m)
            .collect();
        let cost = |c: &[f64]| members.iter().map(|x| euclid(&x.a, c)).sum::<f64>();
        if cost(&mean) <= cost(&proto.centroid_a) {
            proto.centroid_a = mean;
        }

        for j in 0..proto.centroid_b.len() {
            proto.centroid_b[j] = if b_numeric {
                members.iter().map(|x| x.b[j] as f64).sum::<f64>() / m
            } else {
                mode(members.iter().map(|x| x.b[j])).expect("non-empty") as f64
            };
        }
        let c_len = proto.centroid_c.len().max(c_max);
        proto.centroid_c = (0..c_len)
            .map(|j| mode(members.iter().map(|x| x.c.get(j).copied().unwrap_or([0, 0, 0]))).expect("non-empty"))
            .collect();
        for j in 0..4 {
            proto.centroid_d[j] = mode(members.iter().map(|x| x.d[j])).expect("non-empty");
        }
    }

    /// Lloyd-style refinement from the current prototypes until assignments
    /// stop changing or `max_iters` is reached.
    pub fn fit(&mut self, tasks: &[TaskEncoding], max_iters: usize) -> Result<FitReport, HubError> {
        if tasks.is_empty() {
            return Err(HubError::EmptyTasks);
        }
        if self.prototypes.is_empty() {
            return Err(HubError::NoPrototypes);
        }
        let mut trace = Vec::new();
        let mut assignments = self.assign(tasks)?;
        trace.push(self.objective(tasks, &assignments)?);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iters.max(1) {
            iterations += 1;
            for k in 0..self.prototypes.len() {
                let members: Vec<&TaskEncoding> = tasks
                    .iter()
                    .zip(&assignments)
                    .filter(|(_, &a)| a == k)
                    .map(|(x, _)| x)
                    .collect();
                self.update_prototype(k, &members);
            }
            trace.push(self.objective(tasks, &assignments)?);
            let next = self.assign(tasks)?;
            trace.push(self.objective(tasks, &next)?);
            if next == assignments {
                converged = true;
                break;
            }
            assignments = next;
        }
        self.set_counts(&assignments);
        Ok(FitReport {
            assignments,
            iterations,
            converged,
            objective_trace: trace,
        })
    }

    /// Sets `theta_new` to the configured percentile of the tasks' minimum
    /// dissimilarities (nearest-rank), unless already set.
    pub fn derive_threshold(&mut self, tasks: &[TaskEncoding]) -> Result<f64, HubError> {
        if let Some(t) = self.params.theta_new {
            return Ok(t);
        }
        let mut mins = tasks
            .iter()
            .map(|x| self.nearest(x).map(|(_, d)| d))
            .collect::<Result<Vec<_>, _>>()?;
        if mins.is_empty() {
            return Err(HubError::EmptyTasks);
        }
        mins.sort_by(f64::total_cmp);
        let rank = ((self.params.theta_percentile * mins.len() as f64).ceil() as usize).clamp(1, mins.len());
        let theta = mins[rank - 1];
        self.params.theta_new = Some(theta);
        Ok(theta)
    }

    /// True when `x` is farther than `theta_new` from every prototype.
    pub fn is_novel(&self, x: &TaskEncoding) -> Result<bool, HubError> {
        let theta = self.params.theta_new.unwrap_or(f64::INFINITY);
        Ok(self.nearest(x)?.1 > theta)
    }

    /// Creates a prototype centred on `x` when it is novel. `alloc` receives
    /// the nearest prototype's module (to warm-start from) and returns the new
    /// module's id.
    pub fn maintain(
        &mut self,
        x: &TaskEncoding,
        alloc: impl FnOnce(ModuleId) -> ModuleId,
    ) -> Result<MaintenanceAction, HubError> {
        let (index, d) = self.nearest(x)?;
        let theta = self.params.theta_new.unwrap_or(f64::INFINITY);
        if d <= theta {
            return Ok(MaintenanceAction::Keep {
                index,
                dissimilarity: d,
            });
        }
        let nearest_module = self.prototypes[index].module;
        let module = alloc(nearest_module);
        let mut proto = ClusterPrototype::from_encoding(x, self.params.c_max, module);
        proto.member_count = 1;
        self.prototypes.push(proto);
        Ok(MaintenanceAction::Created {
            index: self.prototypes.len() - 1,
            module,
            nearest_module,
            dissimilarity: d,
        })
    }

    /// Removes prototypes whose member count is below `m_min` (never the last
    /// one), then reassigns `tasks` to the survivors. Returns the modules of
    /// removed prototypes.
    pub fn sweep(&mut self, tasks: &[TaskEncoding]) -> Result<Vec<ModuleId>, HubError> {
        let m_min = self.params.m_min;
        let keep_fallback = self
            .prototypes
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.member_count.cmp(&b.member_count).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .ok_or(HubError::NoPrototypes)?;
        let any_survivor = self.prototypes.iter().any(|p| p.member_count >= m_min);
        let mut removed = Vec::new();
        let mut kept = Vec::new();
        for (i, p) in self.prototypes.drain(..).enumerate() {
            if p.member_count >= m_min || (!any_survivor && i == keep_fallback) {
                kept.push(p);
            } else {
                removed.push(p);
            }
        }
        self.prototypes = kept;
        if !tasks.is_empty() {
            self.recount(tasks)?;
        }
        Ok(removed.into_iter().map(|p| p.module).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn enc(a: Vec<f64>, b: Vec<u32>, c: Vec<StructureTriple>, d: [u8; 4]) -> TaskEncoding {
        TaskEncoding { a, b, c, d }
    }

    fn counter() -> impl FnMut() -> ModuleId {
        let mut n = 0;
        move || {
            n += 1;
            ModuleId(n)
        }
    }

    #[test]
    fn identical_encoding_has_zero_dissimilarity() {
        let x = enc(vec![0.2, 0.7], vec![1, 0, 0, 1, 0, 0, 1], vec![[1, 2, 3], [2, 0, 0], [3, 0, 0]], [0, 1, 0, 1]);
        let p = ClusterPrototype::from_encoding(&x, 8, ModuleId(0));
        assert_eq!(dissimilarity(&x, &p, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn gamma_zero_is_euclidean() {
        let x = enc(vec![0.1, 0.9], vec![3, 0, 0, 1, 1, 0, 0], vec![[1, 0, 0]], [1, 1, 1, 1]);
        let y = enc(vec![0.4, 0.5], vec![0, 1, 0, 0, 0, 2, 2], vec![[4, 5, 6]], [0, 0, 0, 0]);
        let p = ClusterPrototype::from_encoding(&y, 4, ModuleId(0));
        let d = dissimilarity(&x, &p, 0.0).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_example() {
        // 0.5 Euclidean + 0.5 * (2 B slots + 1 C triple + 0 D slots) = 2.0
        let x = enc(vec![0.3, 0.4], vec![1, 0, 0, 1, 0, 0, 1], vec![[1, 2, 3], [2, 0, 0], [3, 0, 0]], [0, 0, 1, 1]);
        let c = enc(vec![0.0, 0.0], vec![1, 0, 0, 0, 1, 0, 1], vec![[1, 2, 3], [2, 0, 0], [3, 0, 9]], [0, 0, 1, 1]);
        let p = ClusterPrototype::from_encoding(&c, 64, ModuleId(0));
        let d = dissimilarity(&x, &p, 0.5).unwrap();
        assert!((d - 2.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = enc(vec![0.3], vec![0, 0, 0, 0, 0], vec![[1, 0, 0]], [0; 4]);
        let y = enc(vec![0.3, 0.1], vec![0; 7], vec![[1, 0, 0]], [0; 4]);
        let p = ClusterPrototype::from_encoding(&y, 4, ModuleId(0));
        assert!(matches!(dissimilarity(&x, &p, 0.5), Err(HubError::Shape(_))));
    }

    #[test]
    fn mode_ties_pick_smallest() {
        assert_eq!(mode([3u32, 1, 3, 1, 2].into_iter()), Some(1));
        assert_eq!(mode([5u32, 5, 1].into_iter()), Some(5));
        assert_eq!(mode(std::iter::empty::<u32>()), None);
    }

    fn simple(a: Vec<f64>) -> TaskEncoding {
        enc(a, vec![0; 7], vec![[1, 0, 0]], [0; 4])
    }

    #[test]
    fn single_prototype_takes_global_mean() {
        // Symmetric cloud: the mean is also the best single centre.
        let tasks: Vec<TaskEncoding> = [[0.2, 0.2], [0.2, 0.8], [0.8, 0.2], [0.8, 0.8], [0.5, 0.5]]
            .iter()
            .map(|p| simple(p.to_vec()))
            .collect();
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
        hub.initialize(&tasks, 1, &mut ChaCha8Rng::seed_from_u64(3), counter()).unwrap();
        let report = hub.fit(&tasks, 10).unwrap();
        assert!(report.assignments.iter().all(|&a| a == 0));
        let c = &hub.prototypes[0].centroid_a;
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
        assert_eq!(hub.prototypes[0].member_count, 5);
    }

    #[test]
    fn fitted_hub_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tasks: Vec<TaskEncoding> = (0..40)
            .map(|i| simple(vec![(i % 2) as f64 * 0.8 + rng.gen::<f64>() * 0.1, rng.gen::<f64>() * 0.1]))
            .collect();
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
        hub.initialize(&tasks, 2, &mut rng, counter()).unwrap();
        let first = hub.fit(&tasks, 50).unwrap();
        assert!(first.converged);
        let before = hub.clone();
        let again = hub.fit(&tasks, 50).unwrap();
        assert_eq!(again.assignments, first.assignments);
        assert_eq!(again.iterations, 1);
        assert_eq!(hub, before);
    }

    #[test]
    fn maintain_creates_at_the_task() {
        let tasks = vec![simple(vec![0.0, 0.0]), simple(vec![0.1, 0.0])];
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
        hub.initialize(&tasks, 1, &mut ChaCha8Rng::seed_from_u64(1), counter()).unwrap();
        hub.params.theta_new = Some(0.5);
        let far = simple(vec![1.0, 1.0]);
        let near = simple(vec![0.05, 0.0]);
        assert!(matches!(hub.maintain(&near, |_| ModuleId(99)).unwrap(), MaintenanceAction::Keep { index: 0, .. }));
        let action = hub.maintain(&far, |m| ModuleId(m.0 + 100)).unwrap();
        assert!(matches!(action, MaintenanceAction::Created { index: 1, module: ModuleId(101), .. }));
        assert_eq!(hub.prototypes[1].centroid_a, far.a);
        assert_eq!(hub.nearest(&far).unwrap(), (1, 0.0));

        hub.params.theta_new = Some(f64::INFINITY);
        let very_far = simple(vec![100.0, 100.0]);
        assert!(matches!(hub.maintain(&very_far, |_| ModuleId(7)).unwrap(), MaintenanceAction::Keep { .. }));
    }

    #[test]
    fn sweep_removes_small_clusters() {
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
        let centres = [0.0, 0.5, 1.0];
        for (i, c) in centres.iter().enumerate() {
            let mut p = ClusterPrototype::from_encoding(&simple(vec![*c, 0.0]), 64, ModuleId(i as u32));
            p.member_count = [10, 1, 7][i];
            hub.prototypes.push(p);
        }
        let tasks: Vec<TaskEncoding> = [0.0, 0.1, 0.45, 0.55, 0.9, 1.0].iter().map(|v| simple(vec![*v, 0.0])).collect();
        let removed = hub.sweep(&tasks).unwrap();
        assert_eq!(removed, vec![ModuleId(1)]);
        assert_eq!(hub.len(), 2);
        // Re-derived by argmin against centres {0.0, 1.0}: 0.45 -> 0, 0.55 -> 1.
        let counts: Vec<usize> = hub.prototypes.iter().map(|p| p.member_count).collect();
        assert_eq!(counts, vec![3, 3]);
    }

    #[test]
    fn sweep_never_empties_the_hub() {
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
        for i in 0..3 {
            let mut p = ClusterPrototype::from_encoding(&simple(vec![i as f64, 0.0]), 64, ModuleId(i));
            p.member_count = [0, 1, 1][i as usize];
            hub.prototypes.push(p);
        }
        let removed = hub.sweep(&[]).unwrap();
        assert_eq!(hub.len(), 1);
        assert_eq!(hub.prototypes[0].module, ModuleId(1));
        assert_eq!(removed, vec![ModuleId(0), ModuleId(2)]);
    }

    #[test]
    fn threshold_uses_nearest_rank_percentile() {
        let tasks: Vec<TaskEncoding> = (0..20).map(|i| simple(vec![i as f64 * 0.01, 0.0])).collect();
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
        hub.prototypes.push(ClusterPrototype::from_encoding(&simple(vec![0.0, 0.0]), 64, ModuleId(0)));
        let theta = hub.derive_threshold(&tasks).unwrap();
        // 19 of 20 distances are <= 0.18; the 19th smallest is 0.18.
        assert!((theta - 0.18).abs() < 1e-12);
    }
}
