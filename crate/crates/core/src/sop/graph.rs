//! Static validation of a step graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use super::def::StepDef;
use crate::markup::{AnxConfig, ConfigKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SopLoadError {
    #[error("config kind is not sop")]
    NotSop,
    #[error("duplicate step uuid `{0}`")]
    DuplicateStep(String),
    #[error("step `{step}` references unknown step `{reference}`")]
    DanglingRef { step: String, reference: String },
    #[error("no step is marked start")]
    NoStartStep,
    #[error("more than one start step: {0:?}")]
    MultipleStartSteps(Vec<String>),
    #[error("sources form a cycle: {}", .0.join(" -> "))]
    SourcesCycle(Vec<String>),
    #[error("step `{0}` is unreachable from the start step")]
    UnreachableStep(String),
}

/// A validated SOP: referentially closed, one start step, acyclic sources,
/// every step reachable.
#[derive(Debug, Clone, PartialEq)]
pub struct SopDef {
    pub title: String,
    pub steps: Vec<StepDef>,
    index: HashMap<String, usize>,
    start: usize,
}

impl SopDef {
    pub fn step(&self, uuid: &str) -> Option<&StepDef> {
        self.index.get(uuid).map(|&i| &self.steps[i])
    }

    pub fn start(&self) -> &StepDef {
        &self.steps[self.start]
    }

    /// Steps whose route targets include `uuid`.
    pub fn routers_of<'a>(&'a self, uuid: &'a str) -> impl Iterator<Item = &'a StepDef> + 'a {
        self.steps
            .iter()
            .filter(move |s| s.route_targets().contains(&uuid))
    }

    pub fn uuids(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.uuid.as_str())
    }
}

pub fn load_sop(config: &AnxConfig) -> Result<SopDef, SopLoadError> {
    if config.kind != ConfigKind::Sop {
        return Err(SopLoadError::NotSop);
    }
    sop_from_steps(config.title.clone(), config.steps.clone())
}

pub fn sop_from_steps(title: String, steps: Vec<StepDef>) -> Result<SopDef, SopLoadError> {
    let mut index = HashMap::new();
    for (i, s) in steps.iter().enumerate() {
        if index.insert(s.uuid.clone(), i).is_some() {
            return Err(SopLoadError::DuplicateStep(s.uuid.clone()));
        }
    }
    for s in &steps {
        for r in s.sources.iter().map(String::as_str).chain(s.route_targets()) {
            if !index.contains_key(r) {
                return Err(SopLoadError::DanglingRef {
                    step: s.uuid.clone(),
                    reference: r.to_owned(),
                });
            }
        }
    }
    let starts: Vec<usize> = (0..steps.len()).filter(|&i| steps[i].start).collect();
    let start = match starts.as_slice() {
        [] => return Err(SopLoadError::NoStartStep),
        [one] => *one,
        many => {
            return Err(SopLoadError::MultipleStartSteps(
                many.iter().map(|&i| steps[i].uuid.clone()).collect(),
            ))
        }
    };
    if let Some(cycle) = find_sources_cycle(&steps, &index) {
        return Err(SopLoadError::SourcesCycle(cycle));
    }

    // Forward edges: source -> dependent, router -> target.
    let mut forward: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, s) in steps.iter().enumerate() {
        for src in &s.sources {
            forward.entry(index[src.as_str()]).or_default().insert(i);
        }
        for t in s.route_targets() {
            forward.entry(i).or_default().insert(index[t]);
        }
    }
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &m in forward.get(&n).into_iter().flatten() {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    if let Some(i) = (0..steps.len()).find(|i| !seen.contains(i)) {
        return Err(SopLoadError::UnreachableStep(steps[i].uuid.clone()));
    }

    Ok(SopDef {
        title,
        steps,
        index,
        start,
    })
}

/// Depth-first search over dependent -> source edges; returns the cycle path
/// with its first step repeated at the end.
fn find_sources_cycle(steps: &[StepDef], index: &HashMap<String, usize>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(
        n: usize,
        steps: &[StepDef],
        index: &HashMap<String, usize>,
        marks: &mut [Mark],
        path: &mut Vec<usize>,
    ) -> Option<Vec<String>> {
        marks[n] = Mark::Active;
        path.push(n);
        for src in &steps[n].sources {
            let m = index[src.as_str()];
            match marks[m] {
                Mark::Active => {
                    let from = path.iter().position(|&p| p == m).unwrap_or(0);
                    let mut cycle: Vec<String> =
                        path[from..].iter().map(|&p| steps[p].uuid.clone()).collect();
                    cycle.push(steps[m].uuid.clone());
                    return Some(cycle);
                }
                Mark::New => {
                    if let Some(c) = visit(m, steps, index, marks, path) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        path.pop();
        marks[n] = Mark::Done;
        None
    }

    let mut marks = vec![Mark::New; steps.len()];
    for n in 0..steps.len() {
        if marks[n] == Mark::New {
            if let Some(c) = visit(n, steps, index, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}
