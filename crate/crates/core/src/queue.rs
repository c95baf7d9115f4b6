//! Simple multicast queue (SMQ) merge-and-serve semantics, the dual-queue
//! DSMQ scheduler and the loopback and two-queue-simultaneous baselines.
//!
//! A queue holds at most one *waiting* entry per file. A request for a
//! waiting file merges into that entry; a request for a file that is only
//! in service opens a new tail entry. State dumps use one line per entry:
//!
//! ```text
//! <state> #<seq> file=<n> users=<u,u,..> requests=<count>
//! ```
//!
//! where `<state>` is `wait` or `serv`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// One demand for `file` from `user`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub file: usize,
    pub user: usize,
    pub t_arrival: f64,
}

/// Identifier of a queue entry, unique over the lifetime of a queue.
pub type EntryId = u64;

/// A file together with every request merged into it.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub id: EntryId,
    pub file: usize,
    pub users: BTreeSet<usize>,
    /// Every merged request, duplicates included, for delay accounting.
    pub requests: Vec<Request>,
}

impl QueueEntry {
    fn new(id: EntryId, request: Request) -> Self {
        QueueEntry {
            id,
            file: request.file,
            users: BTreeSet::from([request.user]),
            requests: vec![request],
        }
    }

    fn merge(&mut self, request: Request) {
        self.users.insert(request.user);
        self.requests.push(request);
    }

    /// Earliest arrival among the merged requests.
    pub fn created_at(&self) -> f64 {
        self.requests.first().map_or(f64::NAN, |r| r.t_arrival)
    }
}

/// Sojourn sample emitted when a request completes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub request: Request,
    pub sojourn: f64,
}

/// FIFO multicast queue. Waiting entries keep consecutive ids so the
/// position of a file is `id - front.id`.
#[derive(Debug, Clone)]
pub struct MulticastQueue {
    files: usize,
    waiting: VecDeque<QueueEntry>,
    waiting_by_file: HashMap<usize, EntryId>,
    in_service: Vec<QueueEntry>,
    next_id: EntryId,
}

impl MulticastQueue {
    pub fn new(files: usize) -> Self {
        MulticastQueue {
            files,
            waiting: VecDeque::new(),
            waiting_by_file: HashMap::new(),
            in_service: Vec::new(),
            next_id: 0,
        }
    }

    /// Entries not in service.
    pub fn len(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waiting.is_empty()
    }

    pub fn waiting(&self) -> impl Iterator<Item = &QueueEntry> {
        self.waiting.iter()
    }

    pub fn in_service(&self) -> &[QueueEntry] {
        &self.in_service
    }

    pub fn library_size(&self) -> usize {
        self.files
    }

    /// Merges `request` into the waiting entry for its file or appends a new
    /// tail entry.
    pub fn enqueue(&mut self, request: Request) -> Result<()> {
        if request.file >= self.files {
            return Err(Error::Queue(format!(
                "file {} outside library of {}",
                request.file, self.files
            )));
        }
        if !(request.t_arrival >= 0.0) {
            return Err(Error::Queue(format!("arrival time {} < 0", request.t_arrival)));
        }
        match self.waiting_by_file.get(&request.file) {
            Some(&id) => {
                let front = self.waiting.front().expect("indexed entry exists").id;
                self.waiting[(id - front) as usize].merge(request);
            }
            None => {
                let id = self.next_id;
                self.next_id += 1;
                self.waiting_by_file.insert(request.file, id);
                self.waiting.push_back(QueueEntry::new(id, request));
            }
        }
        Ok(())
    }

    /// Moves the first `min(len, streams)` entries into service.
    pub fn select_service(&mut self, streams: usize) -> Result<Vec<EntryId>> {
        if self.waiting.is_empty() {
            return Err(Error::Queue("cannot start a service on an empty queue".into()));
        }
        if streams == 0 {
            return Err(Error::Queue("need at least one stream".into()));
        }
        let take = streams.min(self.waiting.len());
        let mut ids = Vec::with_capacity(take);
        for _ in 0..take {
            let entry = self.waiting.pop_front().expect("length checked");
            self.waiting_by_file.remove(&entry.file);
            ids.push(entry.id);
            self.in_service.push(entry);
        }
        Ok(ids)
    }

    pub fn in_service_entry(&self, id: EntryId) -> Option<&QueueEntry> {
        self.in_service.iter().find(|e| e.id == id)
    }

    /// Removes in-service entries without emitting samples.
    pub fn take_in_service(&mut self, ids: &[EntryId]) -> Result<Vec<QueueEntry>> {
        if let Some(id) = ids.iter().find(|id| self.in_service_entry(**id).is_none()) {
            return Err(Error::Queue(format!("entry #{id} is not in service")));
        }
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let pos = self.in_service.iter().position(|e| e.id == *id).expect("checked");
            out.push(self.in_service.remove(pos));
        }
        Ok(out)
    }

    /// Finishes the services of `ids` at `t_complete`, one sample per request.
    pub fn complete_service(&mut self, ids: &[EntryId], t_complete: f64) -> Result<Vec<Completion>> {
        let entries = self.take_in_service(ids)?;
        Ok(entries
            .iter()
            .flat_map(|e| e.requests.iter())
            .map(|&request| Completion { request, sojourn: t_complete - request.t_arrival })
            .collect())
    }

    /// Dumps the queue in the line format described in the module docs.
    pub fn dump(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MulticastQueue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tagged = self
            .in_service
            .iter()
            .map(|e| ("serv", e))
            .chain(self.waiting.iter().map(|e| ("wait", e)));
        for (state, e) in tagged {
            let users: Vec<String> = e.users.iter().map(|u| u.to_string()).collect();
            writeln!(
                f,
                "{state} #{} file={} users={} requests={}",
                e.id,
                e.file,
                users.join(","),
                e.requests.len()
            )?;
        }
        Ok(())
    }
}

/// Which of the two class queues a dual discipline works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueClass {
    Good,
    Bad,
}

impl QueueClass {
    pub fn as_str(self) -> &'static str {
        match self {
            QueueClass::Good => "good",
            QueueClass::Bad => "bad",
        }
    }
}

/// Outcome of the DSMQ scheduling decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsmqPick {
    Serve(QueueClass),
    Idle,
}

/// Good- and bad-class queues plus the count of completed services.
#[derive(Debug, Clone)]
pub struct DualQueueState {
    pub good: MulticastQueue,
    pub bad: MulticastQueue,
    pub service_counter: u64,
    good_users: BTreeSet<usize>,
}

impl DualQueueState {
    pub fn new(files: usize, good_users: BTreeSet<usize>) -> Self {
        DualQueueState {
            good: MulticastQueue::new(files),
            bad: MulticastQueue::new(files),
            service_counter: 0,
            good_users,
        }
    }

    pub fn class_of(&self, user: usize) -> QueueClass {
        if self.good_users.contains(&user) {
            QueueClass::Good
        } else {
            QueueClass::Bad
        }
    }

    /// Routes the request to the queue of its user's class.
    pub fn enqueue(&mut self, request: Request) -> Result<QueueClass> {
        let class = self.class_of(request.user);
        self.queue_mut(class).enqueue(request)?;
        Ok(class)
    }

    pub fn queue(&self, class: QueueClass) -> &MulticastQueue {
        match class {
            QueueClass::Good => &self.good,
            QueueClass::Bad => &self.bad,
        }
    }

    pub fn queue_mut(&mut self, class: QueueClass) -> &mut MulticastQueue {
        match class {
            QueueClass::Good => &mut self.good,
            QueueClass::Bad => &mut self.bad,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.good.is_empty() && self.bad.is_empty()
    }

    pub fn record_completed_service(&mut self) {
        self.service_counter += 1;
    }
}

/// The bad queue gets every `cycle`-th service, and any service while the
/// good queue is empty.
pub fn dsmq_pick(state: &DualQueueState, cycle: usize) -> DsmqPick {
    let cycle = cycle.max(2) as u64;
    let bad_turn = state.service_counter % cycle == cycle - 1;
    match (state.good.is_empty(), state.bad.is_empty()) {
        (_, false) if bad_turn => DsmqPick::Serve(QueueClass::Bad),
        (true, false) => DsmqPick::Serve(QueueClass::Bad),
        (false, _) => DsmqPick::Serve(QueueClass::Good),
        (true, true) => DsmqPick::Idle,
    }
}

/// Head-of-line entry ids of every nonempty class queue, good first. Both
/// entries are moved into service.
pub fn two_q_pick(state: &mut DualQueueState) -> Result<Vec<(QueueClass, EntryId)>> {
    if state.is_empty() {
        return Err(Error::Queue("both queues are empty".into()));
    }
    let mut out = Vec::with_capacity(2);
    for class in [QueueClass::Good, QueueClass::Bad] {
        let q = state.queue_mut(class);
        if !q.is_empty() {
            out.push((class, q.select_service(1)?[0]));
        }
    }
    Ok(out)
}

/// Partition of a loopback transmission.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopbackSplit {
    /// Requests delivered by the transmission.
    pub served: Vec<Request>,
    /// Requests of users whose rate fell below the threshold.
    pub looped: Vec<Request>,
}

/// Splits the requests of `entries` into those whose user achieves at least
/// `r_thresh` and those that must loop back. Users missing from
/// `user_rate` count as rate 0.
pub fn loopback_filter(
    entries: &[QueueEntry],
    user_rate: impl Fn(usize) -> Option<f64>,
    r_thresh: f64,
) -> LoopbackSplit {
    let mut split = LoopbackSplit::default();
    for request in entries.iter().flat_map(|e| e.requests.iter()) {
        if user_rate(request.user).unwrap_or(0.0) >= r_thresh {
            split.served.push(*request);
        } else {
            split.looped.push(*request);
        }
    }
    split
}

/// Loopback transmissions always take `F / (B r_thresh)` seconds.
pub fn loopback_service_time(file_bits: f64, bandwidth_hz: f64, r_thresh: f64) -> f64 {
    file_bits / (bandwidth_hz * r_thresh)
}
