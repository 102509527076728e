//! The event loop. Board changes made by reporters, engineers and (pre-bot)
//! the manager go through `ingest`; the bot runs through `run_cycle` on a
//! virtual clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::path::Path;

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::assignment::AssignmentPolicy;
use crate::board::{ingest, run_cycle, BoardChange, BoardError, BoardSnapshot, EventBody, TeamConfig, TicketEvent};
use crate::model::{ActorId, EngineerId, NewTicket, Priority, TicketId, WorkflowState};
use crate::notify::{Channel, ChannelBinding, Sink, SinkError, SinkSet, WireMessage};
use crate::reminder::ReminderKind;
use crate::time::{advance_business_time, at_midnight, business_days, hours, Timestamp};

use super::config::{SimConfig, SimConfigError};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] SimConfigError),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Drops every message.
struct Discard;

impl Sink for Discard {
    fn send(&mut self, _: &WireMessage<'_>) -> Result<(), SinkError> {
        Ok(())
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub config: SimConfig,
    pub team: TeamConfig,
    pub events: Vec<TicketEvent>,
    pub snapshot: BoardSnapshot,
    pub gamers: Vec<EngineerId>,
    pub end: Timestamp,
}

/// Random numbers fixed per ticket at arrival, so runs that differ only in
/// policy see the same work.
#[derive(Debug, Clone)]
struct Draws {
    service_z: f64,
    block_u: f64,
    block_frac: f64,
    block_z: f64,
    hold_u: f64,
    reassign_u: f64,
    reassign_delay_u: f64,
    reassign_target_u: f64,
    manual_delay_u: f64,
    manual_u: f64,
}

impl Draws {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Draws {
            service_z: rng.sample(StandardNormal),
            block_u: rng.random(),
            block_frac: rng.random_range(0.1..0.9),
            block_z: rng.sample(StandardNormal),
            hold_u: rng.random(),
            reassign_u: rng.random(),
            reassign_delay_u: rng.random(),
            reassign_target_u: rng.random(),
            manual_delay_u: rng.random(),
            manual_u: rng.random(),
        }
    }
}

#[derive(Debug, Clone)]
struct Arrival {
    at: Timestamp,
    reporter: ActorId,
    priority: Priority,
    draws: Draws,
}

/// Poisson arrivals per business day, uniform over 9:00 to 18:00, sorted.
fn arrivals(cfg: &SimConfig) -> Vec<Arrival> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ticket_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ticket_rng.set_stream(1);
    let poisson = Poisson::new(cfg.arrival_rate).expect("validated rate");
    let total_w: f64 = cfg.priority_weights.iter().sum();
    let mut out = Vec::new();
    for day in business_days(cfg.start, cfg.horizon_days) {
        let n = poisson.sample(&mut rng) as u64;
        let mut day_arrivals: Vec<Arrival> = (0..n)
            .map(|_| {
                let offset = rng.random_range(9 * 3600..18 * 3600);
                let pick = rng.random::<f64>() * total_w;
                let priority = if pick < cfg.priority_weights[0] {
                    Priority::Low
                } else if pick < cfg.priority_weights[0] + cfg.priority_weights[1] {
                    Priority::Medium
                } else {
                    Priority::High
                };
                let reporter = ActorId::from(format!("r{:02}", rng.random_range(1..=cfg.reporters)));
                Arrival {
                    at: at_midnight(day) + Duration::seconds(offset),
                    reporter,
                    priority,
                    draws: Draws::sample(&mut ticket_rng),
                }
            })
            .collect();
        day_arrivals.sort_by_key(|a| a.at);
        out.append(&mut day_arrivals);
    }
    out
}

/// Ticket creation times only.
pub fn generate_ticket_stream(cfg: &SimConfig) -> Vec<Timestamp> {
    arrivals(cfg).into_iter().map(|a| a.at).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Arrive(usize),
    Cycle,
    ManualAssign(usize),
    Reassign(usize),
    Start(usize),
    Finish(usize, usize),
    Block(usize, usize),
    Unblock(usize),
}

#[derive(Debug, Default)]
struct Engineer {
    median_hours: f64,
    gamer: bool,
    queue: VecDeque<usize>,
    current: Option<usize>,
    start_pending: bool,
}

#[derive(Debug)]
struct SimTicket {
    id: TicketId,
    draws: Draws,
    started: bool,
    remaining: Option<Duration>,
    waiting_unblock: bool,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    team: TeamConfig,
    snapshot: BoardSnapshot,
    events: Vec<TicketEvent>,
    sinks: SinkSet,
    heap: BinaryHeap<Reverse<(Timestamp, u64, Ev)>>,
    order: u64,
    ids: Vec<EngineerId>,
    engineer_index: BTreeMap<EngineerId, usize>,
    engineers: Vec<Engineer>,
    /// Manual-model weight per engineer index.
    zipf: Vec<f64>,
    tickets: Vec<SimTicket>,
    ticket_index: HashMap<TicketId, usize>,
    pending_arrivals: HashMap<usize, Arrival>,
    end: Timestamp,
}

/// Service and block durations are whole seconds, at least one minute.
fn lognormal(median_hours: f64, sigma: f64, z: f64) -> Duration {
    let h = median_hours * (sigma * z).exp();
    Duration::seconds(((h * 3600.0).ceil() as i64).max(60))
}

impl<'a> Sim<'a> {
    fn push(&mut self, at: Timestamp, ev: Ev) {
        self.order += 1;
        self.heap.push(Reverse((at, self.order, ev)));
    }

    fn ingest(&mut self, change: BoardChange) -> Result<(), SimError> {
        let evs = ingest(&mut self.snapshot, &self.team, change)?;
        self.events.extend(evs);
        Ok(())
    }

    fn state(&self, t: usize) -> WorkflowState {
        self.snapshot.tickets[&self.tickets[t].id].state()
    }

    fn assignee(&self, t: usize) -> Option<usize> {
        let ticket = &self.snapshot.tickets[&self.tickets[t].id];
        ticket.assignee().map(|e| self.engineer_index[e])
    }

    fn transition(&mut self, t: usize, to: WorkflowState, now: Timestamp, actor: ActorId) -> Result<(), SimError> {
        let ticket = self.tickets[t].id.clone();
        self.ingest(BoardChange::Transitioned { ticket, to, at: now, actor })
    }

    fn run(mut self) -> Result<SimRun, SimError> {
        while let Some(Reverse((now, _, ev))) = self.heap.pop() {
            if now >= self.end {
                break;
            }
            match ev {
                Ev::Arrive(t) => self.arrive(t, now)?,
                Ev::Cycle => self.cycle(now)?,
                Ev::ManualAssign(t) => self.manual_assign(t, now)?,
                Ev::Reassign(t) => self.reassign(t, now)?,
                Ev::Start(e) => {
                    self.engineers[e].start_pending = false;
                    self.try_start(e, now)?;
                }
                Ev::Finish(e, t) => self.finish(e, t, now)?,
                Ev::Block(e, t) => self.block(e, t, now)?,
                Ev::Unblock(t) => self.unblock(t, now)?,
            }
        }
        let gamers = self.engineers.iter().zip(&self.ids).filter(|(e, _)| e.gamer).map(|(_, id)| id.clone()).collect();
        Ok(SimRun {
            config: self.cfg.clone(),
            team: self.team,
            events: self.events,
            snapshot: self.snapshot,
            gamers,
            end: self.end,
        })
    }

    fn arrive(&mut self, t: usize, now: Timestamp) -> Result<(), SimError> {
        let arrival = self.pending_arrivals.remove(&t).expect("arrival scheduled once");
        self.ingest(BoardChange::Created(NewTicket {
            id: self.tickets[t].id.clone(),
            board_id: self.cfg.board_id.clone(),
            reporter: arrival.reporter,
            created_at: now,
            priority: arrival.priority,
            sla_deadline: None,
            labels: Vec::new(),
        }))?;
        if self.cfg.policy == AssignmentPolicy::Manual {
            let delay = hours(self.tickets[t].draws.manual_delay_u * self.cfg.manual_delay_max_days * 24.0);
            let at = advance_business_time(now, delay).max(now + Duration::seconds(1));
            self.push(at, Ev::ManualAssign(t));
        }
        Ok(())
    }

    fn cycle(&mut self, now: Timestamp) -> Result<(), SimError> {
        let (evs, report) = run_cycle(&mut self.snapshot, &self.team, now, &mut self.sinks)?;
        let response = hours(self.cfg.reporter_response_hours);
        for e in &evs {
            if let EventBody::ReminderSent { ticket, reminder: ReminderKind::StuckState, .. } = &e.body {
                if self.snapshot.tickets[ticket].state() == WorkflowState::Blocked {
                    let t = self.ticket_index[ticket];
                    self.push(now + response, Ev::Unblock(t));
                }
            }
        }
        self.events.extend(evs);
        for d in report.assigned {
            let t = self.ticket_index[&d.ticket];
            let e = self.engineer_index[&d.engineer];
            self.on_assigned(t, e, now)?;
        }
        let next = now + self.team.cycle_period;
        self.push(next, Ev::Cycle);
        Ok(())
    }

    fn on_assigned(&mut self, t: usize, e: usize, now: Timestamp) -> Result<(), SimError> {
        self.engineers[e].queue.push_back(t);
        let d = &self.tickets[t].draws;
        if d.reassign_u < self.cfg.reassign_prob {
            let delay = hours(d.reassign_delay_u * self.cfg.reassign_delay_max_hours).max(Duration::seconds(1));
            self.push(now + delay, Ev::Reassign(t));
        }
        self.try_start(e, now)
    }

    fn available(&self, now: Timestamp) -> Vec<usize> {
        let day = now.date_naive();
        (0..self.ids.len()).filter(|&i| self.team.roster.is_available(&self.ids[i], day)).collect()
    }

    /// Zipf-weighted pick over a fixed random ranking, among engineers
    /// available today.
    fn manual_assign(&mut self, t: usize, now: Timestamp) -> Result<(), SimError> {
        let pool = self.available(now);
        if pool.is_empty() {
            self.push(now + Duration::days(1), Ev::ManualAssign(t));
            return Ok(());
        }
        let chosen = manual_pick(&pool, &self.zipf, self.tickets[t].draws.manual_u);
        self.ingest(BoardChange::ManualAssigned {
            ticket: self.tickets[t].id.clone(),
            engineer: self.ids[chosen].clone(),
            at: now,
        })?;
        self.on_assigned(t, chosen, now)
    }

    /// Hands a not-yet-started ticket to a colleague.
    fn reassign(&mut self, t: usize, now: Timestamp) -> Result<(), SimError> {
        let Some(from) = self.assignee(t) else { return Ok(()) };
        if !self.engineers[from].queue.contains(&t) || self.state(t) != WorkflowState::Backlog {
            return Ok(());
        }
        let pool: Vec<usize> = self.available(now).into_iter().filter(|&i| i != from).collect();
        if pool.is_empty() {
            return Ok(());
        }
        let pick = ((self.tickets[t].draws.reassign_target_u * pool.len() as f64) as usize).min(pool.len() - 1);
        let to = pool[pick];
        self.ingest(BoardChange::Reassigned {
            ticket: self.tickets[t].id.clone(),
            engineer: self.ids[to].clone(),
            at: now,
        })?;
        self.engineers[from].queue.retain(|&x| x != t);
        self.engineers[to].queue.push_back(t);
        self.try_start(to, now)
    }

    fn try_start(&mut self, e: usize, now: Timestamp) -> Result<(), SimError> {
        let eng = &self.engineers[e];
        if eng.current.is_some() || eng.start_pending {
            return Ok(());
        }
        let Some(&t) = eng.queue.front() else { return Ok(()) };
        let last = self.snapshot.tickets[&self.tickets[t].id].last_change();
        if last >= now {
            // Transitions on one ticket need strictly increasing timestamps.
            self.engineers[e].start_pending = true;
            self.push(last + Duration::seconds(1), Ev::Start(e));
            return Ok(());
        }
        self.engineers[e].queue.pop_front();
        self.engineers[e].current = Some(t);
        self.transition(t, WorkflowState::WorkInProgress, now, self.ids[e].clone())?;

        let cfg = self.cfg;
        let median = self.engineers[e].median_hours;
        let st = &mut self.tickets[t];
        let service = st.remaining.take().unwrap_or_else(|| lognormal(median, cfg.service_sigma, st.draws.service_z));
        if !st.started {
            st.started = true;
            if st.draws.block_u < cfg.block_prob {
                let before = Duration::seconds(((service.num_seconds() as f64 * st.draws.block_frac) as i64).max(1));
                st.remaining = Some((service - before).max(Duration::seconds(1)));
                self.push(now + before, Ev::Block(e, t));
                return Ok(());
            }
        }
        self.push(now + service, Ev::Finish(e, t));
        Ok(())
    }

    fn finish(&mut self, e: usize, t: usize, now: Timestamp) -> Result<(), SimError> {
        self.engineers[e].current = None;
        let hold = self.engineers[e].gamer && self.tickets[t].draws.hold_u < self.cfg.gamer_fraction;
        if !hold {
            self.transition(t, WorkflowState::Done, now, self.ids[e].clone())?;
        }
        self.try_start(e, now)
    }

    fn block(&mut self, e: usize, t: usize, now: Timestamp) -> Result<(), SimError> {
        self.engineers[e].current = None;
        self.transition(t, WorkflowState::Blocked, now, self.ids[e].clone())?;
        self.tickets[t].waiting_unblock = true;
        let natural = lognormal(self.cfg.block_median_hours, self.cfg.block_sigma, self.tickets[t].draws.block_z);
        self.push(now + natural, Ev::Unblock(t));
        self.try_start(e, now)
    }

    /// The reporter answered; the ticket goes back to the front of its
    /// engineer's queue.
    fn unblock(&mut self, t: usize, now: Timestamp) -> Result<(), SimError> {
        if !std::mem::take(&mut self.tickets[t].waiting_unblock) {
            return Ok(());
        }
        let e = self.assignee(t).expect("blocked tickets are assigned");
        self.engineers[e].queue.push_front(t);
        self.try_start(e, now)
    }
}

/// Weight `rank^-skew` per engineer index over a seeded random ranking.
pub fn zipf_weights(engineers: usize, skew: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut ranking: Vec<usize> = (0..engineers).collect();
    ranking.shuffle(&mut rng);
    let mut weights = vec![0.0; engineers];
    for (rank, &i) in ranking.iter().enumerate() {
        weights[i] = ((rank + 1) as f64).powf(-skew);
    }
    weights
}

/// Inverse-CDF pick from `pool` by `weights`, with `u` uniform in [0, 1).
pub fn manual_pick(pool: &[usize], weights: &[f64], u: f64) -> usize {
    let total: f64 = pool.iter().map(|&i| weights[i]).sum();
    let mut target = u * total;
    for &i in pool {
        if target < weights[i] {
            return i;
        }
        target -= weights[i];
    }
    *pool.last().expect("non-empty pool")
}

/// The pre-bot manager on its own: each ticket goes independently to an
/// engineer drawn by Zipf weight over a fixed random ranking.
pub fn manual_assignment_model(tickets: usize, roster: &[EngineerId], skew: f64, seed: u64) -> Vec<EngineerId> {
    let weights = zipf_weights(roster.len(), skew, seed);
    let pool: Vec<usize> = (0..roster.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    (0..tickets).map(|_| roster[manual_pick(&pool, &weights, rng.random())].clone()).collect()
}

/// The team configuration the bot runs with in a simulation.
pub fn team_config(cfg: &SimConfig, channel_dir: &Path) -> TeamConfig {
    let ids = cfg.engineer_ids();
    let id_refs: Vec<&str> = ids.iter().map(|i| i.as_str()).collect();
    let mut team = TeamConfig::simple(&cfg.team_id, &cfg.board_id, &id_refs, channel_dir);
    team.policy = cfg.policy;
    team.reminders = cfg.reminders;
    team.cycle_period = Duration::minutes(cfg.cycle_period_minutes as i64);
    team.binding = ChannelBinding::all_to_dir(&cfg.team_id, channel_dir);
    for (id, range) in cfg.leave_ranges() {
        team.roster.entry_mut(id).expect("validated engineer").unavailable.push(range);
    }
    team
}

/// Runs one configuration to the end of its horizon. Channel messages go to
/// `<channel_dir>/<channel>.ndjson` when a directory is given and are
/// discarded otherwise.
pub fn simulate(cfg: &SimConfig, channel_dir: Option<&Path>) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let team = team_config(cfg, channel_dir.unwrap_or(Path::new("channels")));
    let sinks = match channel_dir {
        Some(_) => SinkSet::from_binding(&team.binding, Path::new("")),
        None => {
            let mut s = SinkSet::new();
            for c in [Channel::ChatA, Channel::ChatB, Channel::Email] {
                s.insert(c, Box::new(Discard));
            }
            s
        }
    };

    let ids = cfg.engineer_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let [lo, hi] = cfg.service_median_hours;
    let engineers: Vec<Engineer> = (0..ids.len())
        .map(|i| Engineer {
            median_hours: if hi > lo { rng.random_range(lo..=hi) } else { lo },
            gamer: i < cfg.gamers as usize,
            ..Default::default()
        })
        .collect();
    let zipf = zipf_weights(ids.len(), cfg.manual_skew, cfg.seed);

    let days = business_days(cfg.start, cfg.horizon_days);
    let start = at_midnight(days[0]);
    let end = at_midnight(*days.last().expect("horizon >= 1")) + Duration::days(1);

    let stream = arrivals(cfg);
    let mut sim = Sim {
        cfg,
        team,
        snapshot: BoardSnapshot::new(cfg.board_id.clone()),
        events: Vec::new(),
        sinks,
        heap: BinaryHeap::new(),
        order: 0,
        engineer_index: ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect(),
        ids,
        engineers,
        zipf,
        tickets: Vec::with_capacity(stream.len()),
        ticket_index: HashMap::with_capacity(stream.len()),
        pending_arrivals: HashMap::with_capacity(stream.len()),
        end,
    };
    for (t, a) in stream.into_iter().enumerate() {
        let id = TicketId::from(format!("{}-{}", cfg.board_id, t + 1));
        sim.ticket_index.insert(id.clone(), t);
        sim.tickets.push(SimTicket {
            id,
            draws: a.draws.clone(),
            started: false,
            remaining: None,
            waiting_unblock: false,
        });
        sim.push(a.at, Ev::Arrive(t));
        sim.pending_arrivals.insert(t, a);
    }
    sim.push(start, Ev::Cycle);
    sim.run()
}
