use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use super::{EntryPattern, FiberPattern, Footprint, PlanKind, SamplingPlan};
use crate::tensor::Mode;

/// The structural sampling rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    /// (a) at least two indices per selected mode.
    PatternSize,
    /// (b) every row, column (and fiber, for entry plans) is sampled somewhere.
    Coverage,
    /// (c) patterns overlap in a connected chain.
    Chain,
    /// (d) some overlap has two indices in one mode and one in another.
    DoubleOverlap,
}

impl Rule {
    pub fn letter(self) -> char {
        match self {
            Rule::PatternSize => 'a',
            Rule::Coverage => 'b',
            Rule::Chain => 'c',
            Rule::DoubleOverlap => 'd',
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self {
            Rule::PatternSize => "minimum pattern size",
            Rule::Coverage => "row/column/fiber coverage",
            Rule::Chain => "overlapping chain",
            Rule::DoubleOverlap => "two-plus-one overlap",
        };
        write!(f, "rule ({}) {what}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleViolation {
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Outcome of a structural validation: empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RuleReport {
    pub violations: Vec<RuleViolation>,
}

impl RuleReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: Rule, detail: String) {
        self.violations.push(RuleViolation { rule, detail });
    }

    pub fn summary(&self) -> String {
        self.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
    }
}

fn overlaps(a: &Footprint, b: &Footprint) -> [usize; 3] {
    [0, 1, 2].map(|m| a[m].intersection(&b[m]).len())
}

fn connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    if n <= 1 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && edge(u, v) {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn check_sizes(report: &mut RuleReport, fps: &[Footprint], modes: &[usize]) {
    for (d, fp) in fps.iter().enumerate() {
        for &m in modes {
            if fp[m].len() < 2 {
                report.push(
                    Rule::PatternSize,
                    format!("pattern {d} selects {} {} index(es)", fp[m].len(), Mode::ALL[m].name()),
                );
            }
        }
    }
}

fn check_coverage(report: &mut RuleReport, fps: &[Footprint], dims: [usize; 3], modes: &[usize]) {
    for &m in modes {
        let mut hit = vec![false; dims[m]];
        for fp in fps {
            for &x in fp[m].indices() {
                hit[x] = true;
            }
        }
        if let Some(missing) = hit.iter().position(|&h| !h) {
            let count = hit.iter().filter(|&&h| !h).count();
            report.push(
                Rule::Coverage,
                format!("{} index {missing} is never sampled ({count} missing in total)", Mode::ALL[m].name()),
            );
        }
    }
}

fn fiber_footprints(patterns: &[FiberPattern], dims: [usize; 3]) -> Vec<Footprint> {
    let all = crate::selection::SelectionSet::full(dims[2].max(1));
    patterns.iter().map(|p| [p.rows.clone(), p.cols.clone(), all.clone()]).collect()
}

fn entry_footprints(patterns: &[EntryPattern]) -> Vec<Footprint> {
    patterns.iter().map(|p| [p.rows.clone(), p.cols.clone(), p.fibers.clone()]).collect()
}

fn fiber_edge(a: &Footprint, b: &Footprint) -> bool {
    let o = overlaps(a, b);
    o[0] > 0 || o[1] > 0
}

fn entry_chain_edge(a: &Footprint, b: &Footprint) -> bool {
    overlaps(a, b).iter().filter(|&&x| x > 0).count() >= 2
}

fn entry_align_edge(a: &Footprint, b: &Footprint) -> bool {
    let o = overlaps(a, b);
    (0..3).any(|m| o[m] >= 2 && (0..3).any(|n| n != m && o[n] >= 1))
}

/// Checks the fiber rules: (a) sizes, (b) coverage of rows and columns,
/// (c) every pattern shares a row or column with another and the overlap graph is connected.
pub fn validate_fiber_rules(patterns: &[FiberPattern], dims: [usize; 3]) -> RuleReport {
    let mut report = RuleReport::default();
    if patterns.is_empty() {
        report.push(Rule::Coverage, "no patterns".into());
        return report;
    }
    let fps = fiber_footprints(patterns, dims);
    check_sizes(&mut report, &fps, &[0, 1]);
    check_coverage(&mut report, &fps, dims, &[0, 1]);
    chain(&mut report, &fps, fiber_edge, "a row or column");
    report
}

/// Checks the entry rules: (a) sizes, (b) coverage of all three modes, (c) overlaps in two
/// modes forming a connected chain, (d) chain links with two shared indices in one mode
/// and one in another.
pub fn validate_entry_rules(patterns: &[EntryPattern], dims: [usize; 3]) -> RuleReport {
    let mut report = RuleReport::default();
    if patterns.is_empty() {
        report.push(Rule::Coverage, "no patterns".into());
        return report;
    }
    let fps = entry_footprints(patterns);
    check_sizes(&mut report, &fps, &[0, 1, 2]);
    check_coverage(&mut report, &fps, dims, &[0, 1, 2]);
    let chain_ok = chain(&mut report, &fps, entry_chain_edge, "indices in two modes");
    if chain_ok && fps.len() > 1 && !connected(fps.len(), |u, v| u != v && entry_align_edge(&fps[u], &fps[v])) {
        report.push(
            Rule::DoubleOverlap,
            "overlaps lack two shared indices in one mode plus one in another along a connected chain".into(),
        );
    }
    report
}

fn chain(report: &mut RuleReport, fps: &[Footprint], edge: fn(&Footprint, &Footprint) -> bool, what: &str) -> bool {
    let n = fps.len();
    if n <= 1 {
        return true;
    }
    let mut ok = true;
    for d in 0..n {
        if !(0..n).any(|e| e != d && edge(&fps[d], &fps[e])) {
            report.push(Rule::Chain, format!("pattern {d} shares {what} with no other pattern"));
            ok = false;
        }
    }
    if ok && !connected(n, |u, v| u != v && edge(&fps[u], &fps[v])) {
        report.push(Rule::Chain, "pattern overlap graph is disconnected".into());
        ok = false;
    }
    ok
}

/// Structural validation of any plan kind; slab plans need two indices per selection.
pub fn validate_plan(plan: &SamplingPlan) -> RuleReport {
    match plan.kind() {
        PlanKind::Slab(s) => {
            let mut report = RuleReport::default();
            if s.horizontal.len() < 2 {
                report.push(Rule::PatternSize, format!("{} horizontal slab(s), need at least 2", s.horizontal.len()));
            }
            if s.frontal.len() < 2 {
                report.push(Rule::PatternSize, format!("{} frontal slab(s), need at least 2", s.frontal.len()));
            }
            report
        }
        PlanKind::Fiber(p) => validate_fiber_rules(p, plan.dims()),
        PlanKind::Entry(p) => validate_entry_rules(p, plan.dims()),
    }
}

/// Pattern pairs that can be aligned against each other: for fiber plans, pairs sharing
/// a row or column; for entry plans, pairs with two shared indices in one mode and one in
/// another. Slab plans need no alignment and yield no edges.
pub fn alignment_graph(plan: &SamplingPlan) -> Vec<Vec<usize>> {
    let fps = plan.footprints();
    let n = fps.len();
    let edge: fn(&Footprint, &Footprint) -> bool = match plan.kind() {
        PlanKind::Slab(_) => return vec![Vec::new(); n],
        PlanKind::Fiber(_) => fiber_edge,
        PlanKind::Entry(_) => entry_align_edge,
    };
    (0..n).map(|u| (0..n).filter(|&v| v != u && edge(&fps[u], &fps[v])).collect()).collect()
}
