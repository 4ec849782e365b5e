//! Exploration of room graphs by a scripted, cached policy, with and without
//! phase resets and in-phase edge deduplication.
//!
//! Both agents read their choices from the same [`CachedPolicy`], which is
//! write-once per (room, available directions) key. Any difference between
//! the two runs therefore comes from the execution structure alone.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::stats::{mean, sample_std};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitSpec {
    pub from: String,
    pub direction: String,
    pub to: String,
}

/// Serialised form of a [`RoomGraph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomGraphSpec {
    pub rooms: Vec<String>,
    pub start: String,
    pub exits: Vec<ExitSpec>,
}

/// Rooms joined by labelled directed exits. Exits at each room are kept in
/// lexicographic label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RoomGraphSpec", into = "RoomGraphSpec")]
pub struct RoomGraph {
    names: Vec<String>,
    exits: Vec<Vec<(String, usize)>>,
    start: usize,
}

impl TryFrom<RoomGraphSpec> for RoomGraph {
    type Error = Error;

    fn try_from(spec: RoomGraphSpec) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, name) in spec.rooms.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid(format!("room {name:?} listed twice")));
            }
        }
        let lookup = |name: &str| {
            index.get(name).copied().ok_or_else(|| Error::invalid(format!("unknown room {name:?}")))
        };
        let start = lookup(&spec.start)?;
        let mut exits: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); spec.rooms.len()];
        for e in &spec.exits {
            let (from, to) = (lookup(&e.from)?, lookup(&e.to)?);
            if exits[from].insert(e.direction.clone(), to).is_some() {
                return Err(Error::invalid(format!(
                    "room {:?} has two exits labelled {:?}",
                    e.from, e.direction
                )));
            }
        }
        let graph = RoomGraph {
            names: spec.rooms,
            exits: exits.into_iter().map(|m| m.into_iter().collect()).collect(),
            start,
        };
        let unreachable = graph.names.len() - graph.reachable_from_start();
        if unreachable > 0 {
            return Err(Error::invalid(format!(
                "{unreachable} room(s) cannot be reached from {:?}",
                graph.names[start]
            )));
        }
        Ok(graph)
    }
}

impl From<RoomGraph> for RoomGraphSpec {
    fn from(g: RoomGraph) -> Self {
        let exits = g
            .exits
            .iter()
            .enumerate()
            .flat_map(|(i, ex)| {
                let names = &g.names;
                ex.iter().map(move |(d, to)| ExitSpec {
                    from: names[i].clone(),
                    direction: d.clone(),
                    to: names[*to].clone(),
                })
            })
            .collect();
        RoomGraphSpec { start: g.names[g.start].clone(), rooms: g.names, exits }
    }
}

impl RoomGraph {
    pub fn from_spec(spec: RoomGraphSpec) -> Result<Self> {
        Self::try_from(spec)
    }

    pub fn room_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, room: usize) -> &str {
        &self.names[room]
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn directions(&self, room: usize) -> impl Iterator<Item = &str> {
        self.exits[room].iter().map(|(d, _)| d.as_str())
    }

    pub fn destination(&self, room: usize, direction: &str) -> Option<usize> {
        self.exits[room].iter().find(|(d, _)| d == direction).map(|&(_, to)| to)
    }

    fn reachable_from_start(&self) -> usize {
        let mut seen = vec![false; self.names.len()];
        let mut queue = VecDeque::from([self.start]);
        seen[self.start] = true;
        let mut count = 1;
        while let Some(r) = queue.pop_front() {
            for &(_, to) in &self.exits[r] {
                if !seen[to] {
                    seen[to] = true;
                    count += 1;
                    queue.push_back(to);
                }
            }
        }
        count
    }

    /// `width x height` grid with compass exits, start at the north-west
    /// corner.
    pub fn grid(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        let name = |x: usize, y: usize| format!("r{x}_{y}");
        let mut exits = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let mut add = |dir: &str, tx: usize, ty: usize| {
                    exits.push(ExitSpec { from: name(x, y), direction: dir.into(), to: name(tx, ty) })
                };
                if x + 1 < width {
                    add("east", x + 1, y);
                }
                if x > 0 {
                    add("west", x - 1, y);
                }
                if y + 1 < height {
                    add("south", x, y + 1);
                }
                if y > 0 {
                    add("north", x, y - 1);
                }
            }
        }
        let rooms = (0..height).flat_map(|y| (0..width).map(move |x| name(x, y))).collect();
        Self::from_spec(RoomGraphSpec { rooms, start: name(0, 0), exits })
    }

    /// Random connected graph of `rooms` rooms with two-way exits. The start
    /// room and its first neighbour share the exit label `a` in both
    /// directions, so a first-listed policy oscillates between them.
    pub fn planted_cycle(rooms: usize, extra_edges: usize, seed: u64) -> Result<Self> {
        if rooms < 3 {
            return Err(Error::invalid("a planted-cycle graph needs at least 3 rooms"));
        }
        let mut rng = seed::stream(seed, "governance/graph", 0);
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        edges.insert((0, 1));
        for r in 2..rooms {
            edges.insert((rng.random_range(1..r), r));
        }
        let mut attempts = 0;
        while edges.len() < rooms - 1 + extra_edges && attempts < 100 * (extra_edges + 1) {
            attempts += 1;
            let (a, b) = (rng.random_range(0..rooms), rng.random_range(0..rooms));
            if a != b && (a.min(b), a.max(b)) != (0, 1) {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let mut order: Vec<(usize, usize)> = edges.into_iter().filter(|&e| e != (0, 1)).collect();
        order.shuffle(&mut rng);
        let mut next_label = vec![b'b'; rooms];
        let name = |r: usize| format!("room{r}");
        let mut exits = vec![
            ExitSpec { from: name(0), direction: "a".into(), to: name(1) },
            ExitSpec { from: name(1), direction: "a".into(), to: name(0) },
        ];
        for (a, b) in order {
            for (from, to) in [(a, b), (b, a)] {
                let label = label_for(next_label[from]);
                next_label[from] += 1;
                exits.push(ExitSpec { from: name(from), direction: label, to: name(to) });
            }
        }
        Self::from_spec(RoomGraphSpec { rooms: (0..rooms).map(name).collect(), start: name(0), exits })
    }
}

fn label_for(code: u8) -> String {
    if code <= b'z' {
        (code as char).to_string()
    } else {
        format!("z{}", code - b'z')
    }
}

/// What a cached policy does the first time it sees a key.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissRule {
    /// Lexicographically first available direction.
    #[default]
    FirstListed,
    /// Direction picked by a hash of (seed, room, directions).
    Seeded,
    /// First direction of the list that is available, else first listed.
    Preference(Vec<String>),
}

pub type PolicyKey = (usize, Vec<String>);

/// Write-once table from (room, available directions) to a direction.
/// Every lookup is logged so paired runs can prove they saw the same table.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedPolicy {
    rule: MissRule,
    seed: u64,
    table: HashMap<PolicyKey, String>,
    log: Vec<(PolicyKey, String)>,
}

impl CachedPolicy {
    pub fn new(rule: MissRule, seed: u64) -> Self {
        Self { rule, seed, table: HashMap::new(), log: Vec::new() }
    }

    pub fn choose(&mut self, room: usize, available: &[&str]) -> Option<String> {
        if available.is_empty() {
            return None;
        }
        let key: PolicyKey = (room, available.iter().map(|s| s.to_string()).collect());
        let choice = match self.table.get(&key) {
            Some(c) => c.clone(),
            None => {
                let c = self.on_miss(&key);
                self.table.insert(key.clone(), c.clone());
                c
            }
        };
        self.log.push((key, choice.clone()));
        Some(choice)
    }

    fn on_miss(&self, (room, dirs): &PolicyKey) -> String {
        match &self.rule {
            MissRule::FirstListed => dirs[0].clone(),
            MissRule::Seeded => {
                let h = seed::derive_seed(self.seed, &format!("governance/policy/{room}/{}", dirs.join(",")));
                dirs[(h % dirs.len() as u64) as usize].clone()
            }
            MissRule::Preference(prefs) => {
                prefs.iter().find(|p| dirs.contains(p)).unwrap_or(&dirs[0]).clone()
            }
        }
    }

    pub fn lookups(&self) -> &[(PolicyKey, String)] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Whether every logged lookup agrees with every other lookup of its key.
pub fn lookups_consistent(log: &[(PolicyKey, String)]) -> bool {
    let mut seen: HashMap<&PolicyKey, &String> = HashMap::new();
    log.iter().all(|(k, v)| *seen.entry(k).or_insert(v) == v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernanceMetrics {
    pub distinct_rooms: usize,
    /// Distinct directed labelled edges traversed.
    pub distinct_edges: usize,
    /// Moves that return to the room occupied two steps earlier.
    pub backtracks: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceRun {
    pub metrics: GovernanceMetrics,
    /// Room occupied after each step, starting with the start room.
    pub visits: Vec<usize>,
    /// Distinct rooms seen after each step.
    pub rooms_over_time: Vec<usize>,
}

/// Execution structure of the governed agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    /// Steps per phase; `None` never resets.
    pub phase_k: Option<usize>,
    pub dedup: bool,
}

impl Structure {
    pub const NONE: Structure = Structure { phase_k: None, dedup: false };

    pub fn landmarks(phase_k: usize) -> Self {
        Structure { phase_k: Some(phase_k), dedup: true }
    }
}

fn execute(graph: &RoomGraph, policy: &mut CachedPolicy, steps: usize, structure: Structure) -> Result<GovernanceRun> {
    if structure.phase_k == Some(0) {
        return Err(Error::invalid("phase_K must be at least 1"));
    }
    let mut room = graph.start();
    let mut visits = vec![room];
    let mut seen_rooms = HashSet::from([room]);
    let mut rooms_over_time = vec![1];
    let mut edges: HashSet<(usize, String)> = HashSet::new();
    let mut phase_edges: HashSet<(usize, String)> = HashSet::new();
    let mut backtracks = 0;

    for step in 0..steps {
        if matches!(structure.phase_k, Some(k) if step > 0 && step % k == 0) {
            phase_edges.clear();
        }
        let available: Vec<&str> = graph.directions(room).collect();
        if let Some(mut dir) = policy.choose(room, &available) {
            if structure.dedup && phase_edges.contains(&(room, dir.clone())) {
                if let Some(untried) = available.iter().find(|d| !phase_edges.contains(&(room, d.to_string()))) {
                    dir = untried.to_string();
                }
            }
            let next = graph.destination(room, &dir).ok_or_else(|| {
                Error::ContractViolation(format!("policy chose missing exit {dir:?}"))
            })?;
            phase_edges.insert((room, dir.clone()));
            edges.insert((room, dir));
            if visits.len() >= 2 && next == visits[visits.len() - 2] && next != room {
                backtracks += 1;
            }
            room = next;
            seen_rooms.insert(room);
        }
        visits.push(room);
        rooms_over_time.push(seen_rooms.len());
    }
    Ok(GovernanceRun {
        metrics: GovernanceMetrics {
            distinct_rooms: seen_rooms.len(),
            distinct_edges: edges.len(),
            backtracks,
            steps,
        },
        visits,
        rooms_over_time,
    })
}

/// Follow the cached policy verbatim.
pub fn run_baseline(graph: &RoomGraph, policy: &mut CachedPolicy, steps: usize) -> Result<GovernanceRun> {
    execute(graph, policy, steps, Structure::NONE)
}

/// Follow the cached policy, but within a phase refuse an exit already
/// taken when an untried one exists (lexicographic fallback). Phase memory
/// clears every `phase_k` steps; the policy cache is never touched.
pub fn run_landmarks(
    graph: &RoomGraph,
    policy: &mut CachedPolicy,
    steps: usize,
    structure: Structure,
) -> Result<GovernanceRun> {
    execute(graph, policy, steps, structure)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedRow {
    pub seed: u64,
    pub baseline: GovernanceMetrics,
    pub landmarks: GovernanceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub condition: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTable {
    pub rows: Vec<PairedRow>,
    pub summary: Vec<MetricSummary>,
    /// Rooms-over-time traces of the first seed, per condition.
    pub baseline_trace: Vec<usize>,
    pub landmarks_trace: Vec<usize>,
}

/// Run both agents against one shared cache per seed. `graph_for` builds
/// the graph for a seed (fixed fixtures ignore it).
pub fn paired_trial<F>(
    graph_for: F,
    steps: usize,
    structure: Structure,
    rule: &MissRule,
    seeds: &[u64],
) -> Result<PairedTable>
where
    F: Fn(u64) -> Result<RoomGraph> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::invalid("paired trial needs at least one seed"));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let graph = graph_for(seed)?;
            let mut policy = CachedPolicy::new(rule.clone(), seed);
            let base = run_baseline(&graph, &mut policy, steps)?;
            let lm = run_landmarks(&graph, &mut policy, steps, structure)?;
            if !lookups_consistent(policy.lookups()) {
                return Err(Error::ContractViolation(format!(
                    "cached policy returned different choices for one key (seed {seed})"
                )));
            }
            Ok((PairedRow { seed, baseline: base.metrics, landmarks: lm.metrics }, base, lm))
        })
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<PairedRow> = runs.iter().map(|r| r.0).collect();
    let mut summary = Vec::new();
    for (condition, pick) in [
        ("baseline", (|r: &PairedRow| r.baseline) as fn(&PairedRow) -> GovernanceMetrics),
        ("landmarks", |r: &PairedRow| r.landmarks),
    ] {
        for (metric, get) in [
            ("rooms", (|m: &GovernanceMetrics| m.distinct_rooms) as fn(&GovernanceMetrics) -> usize),
            ("edges", |m: &GovernanceMetrics| m.distinct_edges),
            ("backtracks", |m: &GovernanceMetrics| m.backtracks),
        ] {
            let xs: Vec<f64> = rows.iter().map(|r| get(&pick(r)) as f64).collect();
            summary.push(MetricSummary {
                condition: condition.into(),
                metric: metric.into(),
                mean: mean(&xs),
                std: if xs.len() > 1 { sample_std(&xs) } else { 0.0 },
            });
        }
    }
    let (_, first_base, first_lm) = &runs[0];
    Ok(PairedTable {
        rows,
        summary,
        baseline_trace: first_base.rooms_over_time.clone(),
        landmarks_trace: first_lm.rooms_over_time.clone(),
    })
}
