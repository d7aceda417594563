//! Single ride-share driver on a grid.
//!
//! The city is a `width x height` torus of cells. Each instance fixes a
//! directed neighbourhood (which always contains the cell itself), so that an
//! idle driver has `|neighbourhood| + |R_t|` decisions: move to a neighbour
//! or accept one of the currently shown requests. Travel follows
//! deterministic shortest paths on the neighbourhood graph.
//!
//! Requests are drawn from a fixed synthetic trip pool: `|R| = min(N, R_max)`
//! with `N ~ Poisson(rate)`, then a uniform subset of that size. The request
//! set shown to a busy driver is irrelevant and is stored as empty, which
//! keeps the state space small without changing any value.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Stage, Successor};
use crate::rng::seeded;

/// Cell index `y * width + x`.
pub type Cell = u16;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trip {
    pub origin: Cell,
    pub destination: Cell,
}

impl fmt::Debug for Trip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}", self.origin, self.destination)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Idle,
    EnRoute(Trip),
    Occupied { destination: Cell },
}

impl fmt::Debug for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Idle => f.write_str("idle"),
            Status::EnRoute(trip) => write!(f, "enroute({trip:?})"),
            Status::Occupied { destination } => write!(f, "occupied({destination})"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DriverState {
    pub location: Cell,
    pub status: Status,
    /// Sorted; empty unless the driver is idle.
    pub requests: Vec<Trip>,
}

impl fmt::Debug for DriverState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{} {:?} R{:?}", self.location, self.status, self.requests)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RideAction {
    Move(Cell),
    Accept(Trip),
    /// The only decision of a busy driver.
    Continue,
}

impl fmt::Debug for RideAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RideAction::Move(c) => write!(f, "move{c}"),
            RideAction::Accept(t) => write!(f, "accept{t:?}"),
            RideAction::Continue => f.write_str("continue"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstanceTag {
    D5,
    D10,
    D15,
}

impl InstanceTag {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "D5" => Ok(InstanceTag::D5),
            "D10" => Ok(InstanceTag::D10),
            "D15" => Ok(InstanceTag::D15),
            other => Err(Error::config(format!("unknown ride-share instance {other:?}"))),
        }
    }

    /// Neighbourhood offsets `(dx, dy)`, starting with the cell itself.
    pub fn offsets(self) -> &'static [(i32, i32)] {
        match self {
            InstanceTag::D5 => &[(0, 0), (1, 0), (0, 1)],
            InstanceTag::D10 => &[(0, 0), (0, -1), (0, 1), (1, 0), (-1, 0), (1, 1)],
            InstanceTag::D15 => &[
                (0, 0),
                (0, -1),
                (0, 1),
                (1, 0),
                (-1, 0),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
                (0, 2),
            ],
        }
    }

    pub fn r_max(self) -> usize {
        match self {
            InstanceTag::D5 => 2,
            InstanceTag::D10 => 4,
            InstanceTag::D15 => 5,
        }
    }
}

impl fmt::Display for InstanceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How the status evolves once a trip is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatusRule {
    /// Drive to the pickup, then carry the passenger to the destination.
    #[default]
    Coherent,
    /// The displayed status map read verbatim: the switch to "with passenger"
    /// is keyed to the distance to the destination, even before pickup.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RideShareConfig {
    pub instance: InstanceTag,
    pub width: usize,
    pub height: usize,
    pub horizon: Stage,
    pub r_max: usize,
    /// Fare per accepted trip.
    pub w_base: f64,
    /// Fare per unit of trip distance (one grid step).
    pub w_dist: f64,
    /// Cost charged on every step that changes the location.
    pub move_cost: f64,
    /// Poisson intensity of the number of shown requests.
    pub request_rate: f64,
    pub pool_size: usize,
    pub max_trip_distance: usize,
    pub pool_seed: u64,
    pub status_rule: StatusRule,
    /// Largest outcome space that is enumerated exactly.
    pub enumeration_limit: usize,
}

impl RideShareConfig {
    pub fn for_instance(instance: InstanceTag, desk_scale: bool) -> Self {
        let r_max = instance.r_max();
        let (side, horizon, pool_size, max_trip_distance) = if desk_scale {
            (5, 12, 8, 4)
        } else {
            (20, 40, 7_056, 8)
        };
        Self {
            instance,
            width: side,
            height: side,
            horizon,
            r_max,
            w_base: 2.40,
            w_dist: 2.02,
            move_cost: 0.05,
            request_rate: r_max as f64 / 2.0,
            pool_size,
            max_trip_distance,
            pool_seed: 2017,
            status_rule: StatusRule::Coherent,
            enumeration_limit: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width * self.height > Cell::MAX as usize {
            return Err(Error::config(format!(
                "grid {}x{} is empty or too large",
                self.width, self.height
            )));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        for (name, v) in [
            ("w_base", self.w_base),
            ("w_dist", self.w_dist),
            ("move_cost", self.move_cost),
            ("request_rate", self.request_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.max_trip_distance == 0 {
            return Err(Error::config("max_trip_distance must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RideShare {
    config: RideShareConfig,
    /// `neighbours[c]` in offset order, `neighbours[c][0] == c`.
    neighbours: Vec<Vec<Cell>>,
    distance: Vec<Vec<u16>>,
    /// `next_hop[i][j] = p_1(i, j)`.
    next_hop: Vec<Vec<Cell>>,
    pool: Vec<Trip>,
    /// `P(|R| = k)` for `k = 0..=min(R_max, pool)`.
    size_law: Vec<f64>,
    law: Option<Vec<(Vec<Trip>, f64)>>,
    start: DriverState,
}

pub fn build_instance(tag: InstanceTag, desk_scale: bool) -> Result<(RideShare, RideShareConfig)> {
    let config = RideShareConfig::for_instance(tag, desk_scale);
    Ok((RideShare::new(config.clone())?, config))
}

impl RideShare {
    pub fn new(config: RideShareConfig) -> Result<Self> {
        config.validate()?;
        let cells = config.width * config.height;
        let (w, h) = (config.width as i32, config.height as i32);
        let neighbours: Vec<Vec<Cell>> = (0..cells)
            .map(|c| {
                let (x, y) = ((c % config.width) as i32, (c / config.width) as i32);
                let mut out: Vec<Cell> = Vec::new();
                for &(dx, dy) in config.instance.offsets() {
                    let n = ((y + dy).rem_euclid(h) * w + (x + dx).rem_euclid(w)) as Cell;
                    if !out.contains(&n) {
                        out.push(n);
                    }
                }
                out
            })
            .collect();
        let distance = all_distances(&neighbours)?;
        let next_hop = (0..cells)
            .map(|i| {
                (0..cells)
                    .map(|j| {
                        if i == j {
                            return i as Cell;
                        }
                        let target = distance[i][j] - 1;
                        *neighbours[i][1..]
                            .iter()
                            .filter(|&&n| distance[n as usize][j] == target)
                            .min()
                            .expect("a shortest path exists")
                    })
                    .collect()
            })
            .collect();
        let pool = build_pool(&config, &distance)?;
        let size_law = size_law(config.request_rate, config.r_max.min(pool.len()));
        let mut problem = Self {
            config,
            neighbours,
            distance,
            next_hop,
            pool,
            size_law,
            law: None,
            start: DriverState {
                location: 0,
                status: Status::Idle,
                requests: Vec::new(),
            },
        };
        problem.law = problem.enumerate_law();
        let centre = (problem.config.height / 2) * problem.config.width + problem.config.width / 2;
        let k = problem.config.r_max.min(problem.pool.len());
        let mut rng = seeded(problem.config.pool_seed ^ 0x5EED);
        problem.start = DriverState {
            location: centre as Cell,
            status: Status::Idle,
            requests: problem.subset(k, &mut rng),
        };
        Ok(problem)
    }

    pub fn config(&self) -> &RideShareConfig {
        &self.config
    }

    pub fn pool(&self) -> &[Trip] {
        &self.pool
    }

    pub fn cells(&self) -> usize {
        self.neighbours.len()
    }

    pub fn neighbours(&self, cell: Cell) -> &[Cell] {
        &self.neighbours[cell as usize]
    }

    pub fn distance(&self, from: Cell, to: Cell) -> usize {
        self.distance[from as usize][to as usize] as usize
    }

    /// `p_1(from, to)`; `p_1(i, i) = i`.
    pub fn next_hop(&self, from: Cell, to: Cell) -> Cell {
        self.next_hop[from as usize][to as usize]
    }

    pub fn with_initial_state(mut self, state: DriverState) -> Self {
        self.start = state;
        self
    }

    /// `E|R|` under the request model.
    pub fn expected_request_count(&self) -> f64 {
        self.size_law
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    pub fn fare(&self, trip: &Trip) -> f64 {
        self.config.w_base + self.config.w_dist * self.distance(trip.origin, trip.destination) as f64
    }

    fn subset(&self, k: usize, rng: &mut dyn RngCore) -> Vec<Trip> {
        let mut picked: Vec<Trip> = index::sample(rng, self.pool.len(), k)
            .into_iter()
            .map(|i| self.pool[i])
            .collect();
        picked.sort_unstable();
        picked
    }

    /// Draws the request set shown at the next period.
    pub fn generate_requests(&self, rng: &mut dyn RngCore) -> Vec<Trip> {
        if self.size_law.len() <= 1 {
            return Vec::new();
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.size_law.len() - 1;
        for (i, p) in self.size_law.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        self.subset(k, rng)
    }

    fn enumerate_law(&self) -> Option<Vec<(Vec<Trip>, f64)>> {
        let n = self.pool.len();
        let mut count: usize = 0;
        for k in 0..self.size_law.len() {
            count = count.checked_add(binomial(n, k)?)?;
            if count > self.config.enumeration_limit {
                return None;
            }
        }
        let mut law = Vec::with_capacity(count);
        for (k, &pk) in self.size_law.iter().enumerate() {
            if pk <= 0.0 {
                continue;
            }
            let p = pk / binomial(n, k)? as f64;
            for_each_combination(n, k, &mut |idx| {
                law.push((idx.iter().map(|&i| self.pool[i]).collect::<Vec<_>>(), p));
            });
        }
        for (set, _) in &mut law {
            set.sort_unstable();
        }
        Some(law)
    }

    /// Location and status after `action`.
    pub fn move_driver(&self, state: &DriverState, action: &RideAction) -> (Cell, Status) {
        let l = state.location;
        match (state.status, *action) {
            (Status::Idle, RideAction::Move(c)) => (c, Status::Idle),
            (Status::Idle, RideAction::Accept(trip)) | (Status::EnRoute(trip), _) => {
                match self.config.status_rule {
                    StatusRule::Coherent => {
                        if l != trip.origin {
                            (self.next_hop(l, trip.origin), Status::EnRoute(trip))
                        } else {
                            self.carry(l, trip.destination)
                        }
                    }
                    StatusRule::Literal => {
                        let next = self.next_hop(l, trip.origin);
                        if self.distance(l, trip.destination) > 1 {
                            (next, Status::EnRoute(trip))
                        } else {
                            (
                                next,
                                Status::Occupied {
                                    destination: trip.destination,
                                },
                            )
                        }
                    }
                }
            }
            (Status::Occupied { destination }, _) => match self.config.status_rule {
                StatusRule::Coherent => self.carry(l, destination),
                StatusRule::Literal => {
                    let next = self.next_hop(l, destination);
                    if self.distance(l, destination) > 1 {
                        (next, Status::Occupied { destination })
                    } else {
                        (next, Status::Idle)
                    }
                }
            },
            // busy drivers only continue; anything else keeps the driver put
            (Status::Idle, RideAction::Continue) => (l, Status::Idle),
        }
    }

    /// One step towards `destination` with the passenger on board.
    fn carry(&self, from: Cell, destination: Cell) -> (Cell, Status) {
        let next = self.next_hop(from, destination);
        if next == destination {
            (next, Status::Idle)
        } else {
            (next, Status::Occupied { destination })
        }
    }

    fn reward(&self, state: &DriverState, action: &RideAction) -> f64 {
        let (next, _) = self.move_driver(state, action);
        let fare = match (state.status, action) {
            (Status::Idle, RideAction::Accept(trip)) => self.fare(trip),
            _ => 0.0,
        };
        let moved = if next != state.location {
            self.config.move_cost
        } else {
            0.0
        };
        fare - moved
    }
}

fn all_distances(neighbours: &[Vec<Cell>]) -> Result<Vec<Vec<u16>>> {
    let n = neighbours.len();
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        let mut dist = vec![u16::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &u in &neighbours[v] {
                let u = u as usize;
                if dist[u] == u16::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        if dist.contains(&u16::MAX) {
            return Err(Error::config("the neighbourhood graph is not strongly connected"));
        }
        out.push(dist);
    }
    Ok(out)
}

/// Distinct origin-destination pairs, origins weighted towards two hotspots.
fn build_pool(config: &RideShareConfig, distance: &[Vec<u16>]) -> Result<Vec<Trip>> {
    let cells = distance.len();
    let mut rng = seeded(config.pool_seed);
    let (w, h) = (config.width as f64, config.height as f64);
    let hotspots: Vec<(f64, f64)> = (0..2)
        .map(|_| (rng.random_range(0.0..w), rng.random_range(0.0..h)))
        .collect();
    let weight = |c: usize| {
        let (x, y) = ((c % config.width) as f64, (c / config.width) as f64);
        1.0 + hotspots
            .iter()
            .map(|&(hx, hy)| {
                let dx = (x - hx).abs().min(w - (x - hx).abs());
                let dy = (y - hy).abs().min(h - (y - hy).abs());
                4.0 * (-(dx * dx + dy * dy) / 4.0).exp()
            })
            .sum::<f64>()
    };
    let weights: Vec<f64> = (0..cells).map(weight).collect();
    let total: f64 = weights.iter().sum();
    let reach: Vec<Vec<Cell>> = (0..cells)
        .map(|i| {
            (0..cells)
                .filter(|&j| j != i && distance[i][j] as usize <= config.max_trip_distance)
                .map(|j| j as Cell)
                .collect()
        })
        .collect();
    let available: usize = reach.iter().map(Vec::len).sum();
    if config.pool_size > available {
        return Err(Error::config(format!(
            "only {available} distinct trips fit the grid, {} requested",
            config.pool_size
        )));
    }
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(config.pool_size);
    while pool.len() < config.pool_size {
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut origin = cells - 1;
        for (c, wt) in weights.iter().enumerate() {
            acc += wt;
            if u < acc {
                origin = c;
                break;
            }
        }
        if reach[origin].is_empty() {
            continue;
        }
        let destination = reach[origin][rng.random_range(0..reach[origin].len())];
        let trip = Trip {
            origin: origin as Cell,
            destination,
        };
        if seen.insert(trip) {
            pool.push(trip);
        }
    }
    Ok(pool)
}

/// Law of `min(Poisson(rate), k_max)`.
fn size_law(rate: f64, k_max: usize) -> Vec<f64> {
    let mut law = Vec::with_capacity(k_max + 1);
    let mut p = (-rate).exp();
    let mut below = 0.0;
    for k in 0..k_max {
        law.push(p);
        below += p;
        p *= rate / (k + 1) as f64;
    }
    law.push(1.0 - below);
    law
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    if k > n {
        return Some(0);
    }
    let mut r: usize = 1;
    for i in 0..k {
        r = r.checked_mul(n - i)? / (i + 1);
    }
    Some(r)
}

fn for_each_combination(n: usize, k: usize, visit: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            visit(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, visit);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::with_capacity(k), visit);
}

impl Mdp for RideShare {
    type State = DriverState;
    type Action = RideAction;
    type Outcome = Vec<Trip>;

    fn horizon(&self) -> Stage {
        self.config.horizon
    }

    fn initial_state(&self) -> DriverState {
        self.start.clone()
    }

    fn actions(&self, _t: Stage, state: &DriverState) -> Vec<RideAction> {
        match state.status {
            Status::Idle => self
                .neighbours(state.location)
                .iter()
                .map(|&c| RideAction::Move(c))
                .chain(state.requests.iter().map(|&r| RideAction::Accept(r)))
                .collect(),
            _ => vec![RideAction::Continue],
        }
    }

    fn transition(
        &self,
        _t: Stage,
        state: &DriverState,
        action: &RideAction,
        outcome: &Vec<Trip>,
    ) -> DriverState {
        let (location, status) = self.move_driver(state, action);
        let requests = if status == Status::Idle {
            outcome.clone()
        } else {
            Vec::new()
        };
        DriverState {
            location,
            status,
            requests,
        }
    }

    fn contribution(
        &self,
        _t: Stage,
        state: &DriverState,
        action: &RideAction,
        _outcome: &Vec<Trip>,
    ) -> f64 {
        self.reward(state, action)
    }

    fn sample_outcome(&self, _t: Stage, rng: &mut dyn RngCore) -> Vec<Trip> {
        self.generate_requests(rng)
    }

    fn outcomes(&self, _t: Stage) -> Option<&[(Vec<Trip>, f64)]> {
        self.law.as_deref()
    }

    fn contribution_bound(&self) -> f64 {
        let longest = self
            .pool
            .iter()
            .map(|t| self.distance(t.origin, t.destination))
            .max()
            .unwrap_or(0);
        self.config.w_base + self.config.w_dist * longest as f64 + self.config.move_cost
    }

    fn successor_distribution(
        &self,
        _t: Stage,
        state: &DriverState,
        action: &RideAction,
    ) -> Option<Vec<Successor<DriverState>>> {
        let (location, status) = self.move_driver(state, action);
        let reward = self.reward(state, action);
        if status != Status::Idle {
            return Some(vec![Successor {
                state: DriverState {
                    location,
                    status,
                    requests: Vec::new(),
                },
                probability: 1.0,
                mean_contribution: reward,
            }]);
        }
        let law = self.law.as_ref()?;
        let mut merged: HashMap<&[Trip], usize> = HashMap::new();
        let mut out: Vec<Successor<DriverState>> = Vec::new();
        for (requests, p) in law {
            match merged.get(requests.as_slice()) {
                Some(&i) => out[i].probability += p,
                None => {
                    merged.insert(requests, out.len());
                    out.push(Successor {
                        state: DriverState {
                            location,
                            status,
                            requests: requests.clone(),
                        },
                        probability: *p,
                        mean_contribution: reward,
                    });
                }
            }
        }
        Some(out)
    }
}
