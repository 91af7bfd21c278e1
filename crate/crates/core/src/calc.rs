//! Dependency graph and full recalculation.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use crate::address::CellAddress;
use crate::formula::{evaluate, reference_nodes, CellValue, ErrorKind, RefNode};
use crate::grid::{CellContent, Workbook};

/// Sheet index, row, column.
type SortKey = (usize, u32, u32);

/// Edges from each formula cell to the formula cells it reads, plus an
/// evaluation order and the cells caught in cycles.
#[derive(Debug, Clone, Default)]
pub struct DependencyGraph {
    precedents: HashMap<CellAddress, Vec<CellAddress>>,
    order: Vec<CellAddress>,
    cycles: Vec<Vec<CellAddress>>,
}

impl DependencyGraph {
    /// Builds the graph over formula cells, treating cells for which
    /// `overridden` holds as plain values.
    pub fn build(wb: &Workbook, overridden: &dyn Fn(&CellAddress) -> bool) -> Self {
        let mut per_sheet: HashMap<&str, Vec<CellAddress>> = HashMap::new();
        let mut nodes: Vec<CellAddress> = Vec::new();
        for (addr, _) in wb.formulas() {
            if overridden(&addr) {
                continue;
            }
            nodes.push(addr.clone());
        }
        for addr in &nodes {
            per_sheet.entry(wb.sheet(&addr.sheet).map_or("", |s| s.name())).or_default().push(addr.clone());
        }
        let node_set: HashSet<&CellAddress> = nodes.iter().collect();

        let mut precedents: HashMap<CellAddress, Vec<CellAddress>> = HashMap::new();
        for addr in &nodes {
            let f = wb.content(addr).as_formula().expect("formula node");
            let mut deps = Vec::new();
            for node in reference_nodes(f.ast()) {
                match node {
                    RefNode::Cell(r) => {
                        let target = r.resolve(&addr.sheet);
                        if node_set.contains(&target) {
                            deps.push(target);
                        }
                    }
                    RefNode::Range(r) => {
                        let range = r.resolve(&addr.sheet);
                        let Some(candidates) = per_sheet.get(range.sheet.as_str()) else { continue };
                        deps.extend(candidates.iter().filter(|c| range.contains(c)).cloned());
                    }
                }
            }
            deps.sort_by_key(|d| wb.sort_key(d));
            deps.dedup();
            precedents.insert(addr.clone(), deps);
        }

        let cycles = strongly_connected(&nodes, &precedents)
            .into_iter()
            .filter(|scc| scc.len() > 1 || precedents[&scc[0]].contains(&scc[0]))
            .map(|mut scc| {
                scc.sort_by_key(|a| wb.sort_key(a));
                scc
            })
            .collect::<Vec<_>>();
        let cyclic: HashSet<&CellAddress> = cycles.iter().flatten().collect();

        // Kahn's algorithm, smallest sort key first, for a deterministic order.
        let mut indegree: HashMap<&CellAddress, usize> = HashMap::new();
        let mut dependents: HashMap<&CellAddress, Vec<&CellAddress>> = HashMap::new();
        for addr in nodes.iter().filter(|a| !cyclic.contains(a)) {
            let live: Vec<&CellAddress> = precedents[addr].iter().filter(|p| !cyclic.contains(p)).collect();
            indegree.insert(addr, live.len());
            for p in live {
                dependents.entry(p).or_default().push(addr);
            }
        }
        let mut heap: BinaryHeap<Reverse<(SortKey, &CellAddress)>> =
            indegree.iter().filter(|(_, &d)| d == 0).map(|(a, _)| Reverse((wb.sort_key(a), *a))).collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(Reverse((_, addr))) = heap.pop() {
            order.push(addr.clone());
            for dep in dependents.get(addr).map(Vec::as_slice).unwrap_or_default() {
                let d = indegree.get_mut(dep).expect("known node");
                *d -= 1;
                if *d == 0 {
                    heap.push(Reverse((wb.sort_key(dep), dep)));
                }
            }
        }

        Self { precedents, order, cycles }
    }

    /// Formula cells outside cycles, precedents first.
    pub fn order(&self) -> &[CellAddress] {
        &self.order
    }

    pub fn cycles(&self) -> &[Vec<CellAddress>] {
        &self.cycles
    }

    pub fn precedents(&self, addr: &CellAddress) -> &[CellAddress] {
        self.precedents.get(addr).map(Vec::as_slice).unwrap_or_default()
    }
}

/// Iterative Tarjan; long formula chains must not overflow the stack.
fn strongly_connected(nodes: &[CellAddress], edges: &HashMap<CellAddress, Vec<CellAddress>>) -> Vec<Vec<CellAddress>> {
    let index_of: HashMap<&CellAddress, usize> = nodes.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let adj: Vec<Vec<usize>> = nodes.iter().map(|a| edges[a].iter().map(|b| index_of[b]).collect()).collect();

    let n = nodes.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next = 0;
    let mut out = Vec::new();

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (v, ref mut child)) = work.last_mut() {
            if *child == 0 && index[v] == usize::MAX {
                index[v] = next;
                low[v] = next;
                next += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = adj[v].get(*child) {
                *child += 1;
                if index[w] == usize::MAX {
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut scc = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    scc.push(nodes[w].clone());
                    if w == v {
                        break;
                    }
                }
                out.push(scc);
            }
        }
    }
    out
}

/// Computed values for every occupied cell of one workbook generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComputedState {
    pub generation: u64,
    values: BTreeMap<CellAddress, CellValue>,
}

impl ComputedState {
    pub fn get(&self, addr: &CellAddress) -> CellValue {
        self.values.get(addr).cloned().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellAddress, &CellValue)> {
        self.values.iter()
    }
}

/// Recalculates every formula. `overrides` replace the content of the given
/// cells (formula or not) for this computation only.
pub fn recalculate(wb: &Workbook, overrides: &BTreeMap<CellAddress, CellValue>) -> ComputedState {
    let graph = DependencyGraph::build(wb, &|a| overrides.contains_key(a));
    recalculate_with(wb, &graph, overrides)
}

pub fn recalculate_with(
    wb: &Workbook,
    graph: &DependencyGraph,
    overrides: &BTreeMap<CellAddress, CellValue>,
) -> ComputedState {
    let mut values = BTreeMap::new();
    for sheet in wb.sheets() {
        for (col, row, cell) in sheet.cells() {
            if let CellContent::Value(s) = &cell.content {
                values.insert(CellAddress::new(sheet.name(), col, row), s.to_value());
            }
        }
    }
    for (addr, v) in overrides {
        values.insert(addr.clone(), v.clone());
    }
    for addr in graph.cycles().iter().flatten() {
        values.insert(addr.clone(), CellValue::Error(ErrorKind::Cycle));
    }
    for addr in graph.order() {
        let f = wb.content(addr).as_formula().expect("formula in order");
        let v = {
            let lookup = |a: &CellAddress| -> CellValue {
                if wb.sheet(&a.sheet).is_none() {
                    return CellValue::Error(ErrorKind::Ref);
                }
                values.get(a).cloned().unwrap_or_default()
            };
            evaluate(f.ast(), &addr.sheet, &lookup)
        };
        values.insert(addr.clone(), v);
    }
    ComputedState { generation: wb.generation(), values }
}
