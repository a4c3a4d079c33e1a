//! Three-phase BFT agreement on a bundle digest over a simulated network.
//!
//! The network is a discrete-event queue with seeded latency. Replica `i`
//! is an independent state machine; nothing is shared except messages.
//! Point-to-point sends are counted as messages. In a fault-free round:
//!
//! - the leader sends its pre-prepare to the `n-1` backups, and every
//!   backup relays the copy it got from the leader to the other `n-1`
//!   replicas, so equivocation is visible to everyone;
//! - all `n` replicas broadcast a prepare and a commit.
//!
//! That is `3n(n-1)` messages per committed round.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, DigestBuilder, KeyDirectory, PublicKey, SecretKey, Signature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    PrePrepare,
    Prepare,
    Commit,
    ViewChange,
}

impl Phase {
    fn code(self) -> u64 {
        match self {
            Phase::PrePrepare => 0,
            Phase::Prepare => 1,
            Phase::Commit => 2,
            Phase::ViewChange => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConsensusMessage {
    pub phase: Phase,
    pub view: u64,
    pub sequence: u64,
    pub bundle_digest: Digest,
    pub sender: PublicKey,
}

impl ConsensusMessage {
    pub fn signing_digest(&self) -> Digest {
        DigestBuilder::tagged("consensus")
            .u64(self.phase.code())
            .u64(self.view)
            .u64(self.sequence)
            .digest(&self.bundle_digest)
            .finish()
    }

    pub fn sign(self, key: &SecretKey) -> SignedMessage {
        SignedMessage {
            signature: key.sign(&self.signing_digest()),
            message: self,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignedMessage {
    pub message: ConsensusMessage,
    pub signature: Signature,
}

impl SignedMessage {
    pub fn verify(&self, keys: &KeyDirectory) -> bool {
        keys.verify(
            &self.message.sender,
            &self.message.signing_digest(),
            &self.signature,
        )
    }
}

/// Two signed messages from one sender that disagree on the same slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub first: SignedMessage,
    pub second: SignedMessage,
}

impl Evidence {
    /// Same sender, same agreement phase, same (view, sequence), different
    /// digests. Signatures are checked separately.
    pub fn is_conflict(&self) -> bool {
        let (a, b) = (&self.first.message, &self.second.message);
        a.sender == b.sender
            && a.phase == b.phase
            && a.phase != Phase::ViewChange
            && a.view == b.view
            && a.sequence == b.sequence
            && a.bundle_digest != b.bundle_digest
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    #[default]
    Honest,
    /// Sends nothing and signs nothing.
    Silent,
    /// Signs the real digest for some recipients and a forged one for the rest.
    Equivocating,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Uniform one-way latency bounds, in milliseconds.
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub view_timeout_ms: u64,
    /// View changes allowed per round before giving up.
    pub max_view_changes: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            latency_min_ms: 5,
            latency_max_ms: 50,
            view_timeout_ms: 2_000,
            max_view_changes: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Replica {
    pub key: SecretKey,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("no agreement after {views} views")]
    ViewChangeExhausted { views: u64 },
    #[error("honest replicas committed different digests")]
    Divergence,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub pre_prepare: u64,
    pub prepare: u64,
    pub commit: u64,
    pub view_change: u64,
}

impl MessageCounts {
    pub fn total(&self) -> u64 {
        self.pre_prepare + self.prepare + self.commit + self.view_change
    }

    fn bump(&mut self, phase: Phase) {
        match phase {
            Phase::PrePrepare => self.pre_prepare += 1,
            Phase::Prepare => self.prepare += 1,
            Phase::Commit => self.commit += 1,
            Phase::ViewChange => self.view_change += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub decided: Digest,
    /// View in which the decision was reached.
    pub view: u64,
    /// Digest committed by each honest replica, by index.
    pub commits: BTreeMap<usize, Digest>,
    pub messages: MessageCounts,
    /// Logical time of the last honest commit.
    pub elapsed_ms: u64,
    /// One conflict per offender, found by pooling honest replicas' logs.
    pub evidence: Vec<Evidence>,
}

pub fn quorum_size(n: usize) -> usize {
    2 * ((n.max(1) - 1) / 3) + 1
}

pub fn leader_index(view: u64, n: usize) -> usize {
    (view % n as u64) as usize
}

/// The digest an equivocator pairs with the real one.
pub fn forged_digest(real: &Digest) -> Digest {
    DigestBuilder::tagged("equivocation").digest(real).finish()
}

struct Delivery {
    from: usize,
    to: usize,
    msg: SignedMessage,
}

enum Event {
    Deliver(Delivery),
    Timeout { replica: usize, view: u64 },
}

#[derive(Default)]
struct ReplicaState {
    view: u64,
    accepted: Option<Digest>,
    relayed: bool,
    prepares: BTreeSet<PublicKey>,
    commits: BTreeSet<PublicKey>,
    prepared: bool,
    committed: Option<Digest>,
    view_changes: BTreeMap<u64, BTreeSet<PublicKey>>,
    sent_view_change: BTreeSet<u64>,
    future: Vec<Delivery>,
    log: Vec<SignedMessage>,
}

impl ReplicaState {
    fn enter_view(&mut self, view: u64) {
        self.view = view;
        self.accepted = None;
        self.relayed = false;
        self.prepares.clear();
        self.commits.clear();
        self.prepared = false;
    }
}

struct Sim<'a> {
    replicas: &'a [Replica],
    pks: Vec<PublicKey>,
    keys: &'a KeyDirectory,
    net: &'a NetworkConfig,
    local_digest: Digest,
    sequence: u64,
    start_view: u64,
    quorum: usize,
    states: Vec<ReplicaState>,
    queue: BinaryHeap<Reverse<(u64, u64, usize)>>,
    events: Vec<Option<Event>>,
    now: u64,
    rng: ChaCha8Rng,
    counts: MessageCounts,
    last_commit_at: u64,
}

impl<'a> Sim<'a> {
    fn n(&self) -> usize {
        self.replicas.len()
    }

    fn schedule(&mut self, at: u64, event: Event) {
        let id = self.events.len();
        self.events.push(Some(event));
        self.queue.push(Reverse((at, id as u64, id)));
    }

    fn send(&mut self, from: usize, to: usize, msg: SignedMessage) {
        self.counts.bump(msg.message.phase);
        let latency = self
            .rng
            .gen_range(self.net.latency_min_ms..=self.net.latency_max_ms);
        self.schedule(
            self.now + latency,
            Event::Deliver(Delivery { from, to, msg }),
        );
    }

    fn broadcast(&mut self, from: usize, msg: SignedMessage) {
        for to in 0..self.n() {
            if to != from {
                self.send(from, to, msg);
            }
        }
    }

    fn message(&self, from: usize, phase: Phase, view: u64, digest: Digest) -> SignedMessage {
        ConsensusMessage {
            phase,
            view,
            sequence: self.sequence,
            bundle_digest: digest,
            sender: self.pks[from],
        }
        .sign(&self.replicas[from].key)
    }

    /// Equivocators send the real digest to even-indexed peers and a forged
    /// one to odd-indexed peers.
    fn equivocate(&mut self, from: usize, phase: Phase, view: u64) {
        let real = self.message(from, phase, view, self.local_digest);
        let fake = self.message(from, phase, view, forged_digest(&self.local_digest));
        for to in 0..self.n() {
            if to != from {
                self.send(from, to, if to % 2 == 0 { real } else { fake });
            }
        }
    }

    fn start_view(&mut self, i: usize, view: u64) {
        self.states[i].enter_view(view);
        let leader = leader_index(view, self.n());
        match self.replicas[i].behavior {
            Behavior::Silent => return,
            Behavior::Equivocating => {
                if i == leader {
                    self.equivocate(i, Phase::PrePrepare, view);
                } else {
                    self.equivocate(i, Phase::Prepare, view);
                    self.equivocate(i, Phase::Commit, view);
                }
            }
            Behavior::Honest => {
                let at = self.now + self.net.view_timeout_ms;
                self.schedule(at, Event::Timeout { replica: i, view });
                if i == leader {
                    let pp = self.message(i, Phase::PrePrepare, view, self.local_digest);
                    self.broadcast(i, pp);
                    self.accept(i, self.local_digest);
                }
            }
        }
        let buffered = std::mem::take(&mut self.states[i].future);
        for d in buffered {
            self.deliver(d);
        }
    }

    fn accept(&mut self, i: usize, digest: Digest) {
        let view = self.states[i].view;
        self.states[i].accepted = Some(digest);
        let prepare = self.message(i, Phase::Prepare, view, digest);
        self.states[i].prepares.insert(self.pks[i]);
        self.broadcast(i, prepare);
        self.progress(i);
    }

    fn progress(&mut self, i: usize) {
        let st = &self.states[i];
        if st.committed.is_some() || st.accepted.is_none() {
            return;
        }
        let digest = st.accepted.expect("checked");
        let view = st.view;
        if !st.prepared && st.prepares.len() >= self.quorum {
            self.states[i].prepared = true;
            self.states[i].commits.insert(self.pks[i]);
            let commit = self.message(i, Phase::Commit, view, digest);
            self.broadcast(i, commit);
        }
        let st = &self.states[i];
        if st.prepared && st.commits.len() >= self.quorum {
            self.states[i].committed = Some(digest);
            self.last_commit_at = self.now;
        }
    }

    fn deliver(&mut self, d: Delivery) {
        let i = d.to;
        let behavior = self.replicas[i].behavior;
        if behavior == Behavior::Silent || !d.msg.verify(self.keys) {
            return;
        }
        let m = d.msg.message;
        if m.sequence != self.sequence {
            return;
        }
        let Some(sender) = self.pks.iter().position(|pk| *pk == m.sender) else {
            return;
        };
        if behavior == Behavior::Honest && m.phase != Phase::ViewChange {
            self.states[i].log.push(d.msg);
        }
        if m.phase == Phase::ViewChange {
            self.on_view_change(i, sender, m.view);
            return;
        }
        if behavior != Behavior::Honest {
            return;
        }
        let view = self.states[i].view;
        if m.view > view {
            if self.states[i].committed.is_none() {
                self.states[i].future.push(d);
            }
            return;
        }
        if m.view < view {
            return;
        }
        let from_leader = sender == leader_index(view, self.n());
        // Relaying the leader's direct copy is independent of local progress:
        // a replica may already have committed on a relayed copy.
        if m.phase == Phase::PrePrepare
            && from_leader
            && d.from == sender
            && !self.states[i].relayed
            && i != sender
        {
            self.states[i].relayed = true;
            for to in 0..self.n() {
                if to != i {
                    self.send(i, to, d.msg);
                }
            }
        }
        if self.states[i].committed.is_some() {
            return;
        }
        match m.phase {
            Phase::PrePrepare => {
                if !from_leader {
                    return;
                }
                if self.states[i].accepted.is_none() && m.bundle_digest == self.local_digest {
                    self.accept(i, m.bundle_digest);
                }
            }
            Phase::Prepare | Phase::Commit => {
                // Votes only count toward the digest this replica accepted;
                // before acceptance, only matching local digests are kept.
                if m.bundle_digest != self.local_digest {
                    return;
                }
                let st = &mut self.states[i];
                if m.phase == Phase::Prepare {
                    st.prepares.insert(m.sender);
                } else {
                    st.commits.insert(m.sender);
                }
                self.progress(i);
            }
            Phase::ViewChange => unreachable!(),
        }
    }

    fn on_view_change(&mut self, i: usize, sender: usize, target: u64) {
        if target <= self.states[i].view {
            return;
        }
        let votes = {
            let set = self.states[i].view_changes.entry(target).or_default();
            set.insert(self.pks[sender]);
            set.len()
        };
        let honest = self.replicas[i].behavior == Behavior::Honest;
        let f = (self.n() - 1) / 3;
        if honest && self.states[i].committed.is_none() && votes > f {
            self.send_view_change(i, target);
        }
        let votes = self.states[i].view_changes[&target].len();
        if votes >= self.quorum && self.states[i].committed.is_none() {
            self.start_view(i, target);
        }
    }

    fn send_view_change(&mut self, i: usize, target: u64) {
        if !self.states[i].sent_view_change.insert(target) {
            return;
        }
        self.states[i]
            .view_changes
            .entry(target)
            .or_default()
            .insert(self.pks[i]);
        let vc = self.message(i, Phase::ViewChange, target, Digest::ZERO);
        self.broadcast(i, vc);
        let votes = self.states[i].view_changes[&target].len();
        if votes >= self.quorum && self.states[i].committed.is_none() {
            self.start_view(i, target);
        }
    }

    fn on_timeout(&mut self, i: usize, view: u64) {
        let st = &self.states[i];
        if st.committed.is_some() || st.view != view {
            return;
        }
        if view + 1 > self.start_view + self.net.max_view_changes {
            return;
        }
        self.send_view_change(i, view + 1);
    }

    fn run(&mut self) {
        for i in 0..self.n() {
            self.start_view(i, self.start_view);
        }
        while let Some(Reverse((at, _, id))) = self.queue.pop() {
            self.now = at;
            match self.events[id].take().expect("each event fires once") {
                Event::Deliver(d) => self.deliver(d),
                Event::Timeout { replica, view } => self.on_timeout(replica, view),
            }
        }
    }

    fn evidence(&self) -> Vec<Evidence> {
        let mut seen: BTreeMap<(PublicKey, Phase, u64), SignedMessage> = BTreeMap::new();
        let mut found: BTreeMap<PublicKey, Evidence> = BTreeMap::new();
        for (i, st) in self.states.iter().enumerate() {
            if self.replicas[i].behavior != Behavior::Honest {
                continue;
            }
            for msg in &st.log {
                let m = msg.message;
                let slot = (m.sender, m.phase, m.view);
                match seen.get(&slot) {
                    None => {
                        seen.insert(slot, *msg);
                    }
                    Some(first) if first.message.bundle_digest != m.bundle_digest => {
                        found.entry(m.sender).or_insert(Evidence {
                            first: *first,
                            second: *msg,
                        });
                    }
                    Some(_) => {}
                }
            }
        }
        found.into_values().collect()
    }
}

/// Runs one consensus instance. `replicas` are in committee order; every
/// replica proposes and validates against `bundle_digest`, the digest of
/// the bundle it assembled from the chain.
pub fn run_round(
    replicas: &[Replica],
    keys: &KeyDirectory,
    bundle_digest: Digest,
    sequence: u64,
    start_view: u64,
    net: &NetworkConfig,
    seed: u64,
) -> Result<RoundOutcome, ConsensusError> {
    let n = replicas.len();
    let rng_seed = DigestBuilder::tagged("network")
        .u64(seed)
        .u64(sequence)
        .finish();
    let mut sim = Sim {
        replicas,
        pks: replicas.iter().map(|r| r.key.public_key()).collect(),
        keys,
        net,
        local_digest: bundle_digest,
        sequence,
        start_view,
        quorum: quorum_size(n),
        states: (0..n).map(|_| ReplicaState::default()).collect(),
        queue: BinaryHeap::new(),
        events: Vec::new(),
        now: 0,
        rng: ChaCha8Rng::from_seed(*rng_seed.as_bytes()),
        counts: MessageCounts::default(),
        last_commit_at: 0,
    };
    sim.run();

    let honest: Vec<usize> = (0..n)
        .filter(|&i| replicas[i].behavior == Behavior::Honest)
        .collect();
    let commits: BTreeMap<usize, Digest> = honest
        .iter()
        .filter_map(|&i| sim.states[i].committed.map(|d| (i, d)))
        .collect();
    let views = sim.net.max_view_changes + 1;
    if commits.len() < honest.len() || honest.is_empty() {
        return Err(ConsensusError::ViewChangeExhausted { views });
    }
    let decided = commits.values().next().copied().expect("non-empty");
    if commits.values().any(|d| *d != decided) {
        return Err(ConsensusError::Divergence);
    }
    let view = honest
        .iter()
        .map(|&i| sim.states[i].view)
        .max()
        .unwrap_or(start_view);
    Ok(RoundOutcome {
        decided,
        view,
        commits,
        messages: sim.counts.clone(),
        elapsed_ms: sim.last_commit_at,
        evidence: sim.evidence(),
    })
}
