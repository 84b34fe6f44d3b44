//! Deterministic synchronous message-passing simulator.
//!
//! Agents are isolated state machines stepped in lockstep phases. Messages
//! sent in phase `t` are delivered at the barrier of phase `t + 1`, only
//! between constraint-graph neighbors. For a fixed (instance, program,
//! parameters, seed) the full run trace is identical across executions and
//! independent of the order in which agent steps run within a phase.

use crate::model::{AgentId, AgentView, Cost, DcopInstance};
use crate::tree::{build_bfs_tree, default_root, PseudoTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use thiserror::Error;

/// Derives an order-independent random stream for `(seed, agent, label,
/// index)`. FNV-1a keeps the derivation stable across platforms and releases.
pub fn derive_rng(seed: u64, agent: AgentId, label: &str, index: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(&(agent as u64).to_le_bytes());
    eat(label.as_bytes());
    eat(&index.to_le_bytes());
    ChaCha8Rng::seed_from_u64(h)
}

/// Everything an agent is allowed to see: its own id, neighbors, incident
/// tables, its slot in the pseudo-tree and the run seed for stream derivation.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub agent_id: AgentId,
    pub n_agents: usize,
    pub seed: u64,
    pub view: AgentView,
    pub tree_parent: Option<AgentId>,
    pub tree_children: Vec<AgentId>,
    pub tree_level: u32,
    pub tree_height: u32,
    pub subtree_height: u32,
    pub is_root: bool,
}

impl AgentContext {
    pub fn neighbors(&self) -> &[AgentId] {
        &self.view.neighbors
    }

    pub fn rng(&self, label: &str, index: u64) -> ChaCha8Rng {
        derive_rng(self.seed, self.agent_id, label, index)
    }
}

/// A message in flight. Delivered exactly once, at the barrier immediately
/// following the send.
#[derive(Debug, Clone)]
pub struct Envelope<M> {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub msg: M,
}

/// Payload accounting for the run trace: message class plus the number of
/// scalar values carried (constant-size headers excluded).
pub trait Payload {
    fn class(&self) -> &'static str;
    fn scalar_count(&self) -> usize;
}

/// Collects an agent's outgoing envelopes for the current phase.
pub struct Outbox<M> {
    sender: AgentId,
    envelopes: Vec<Envelope<M>>,
}

impl<M> Outbox<M> {
    pub fn send(&mut self, receiver: AgentId, msg: M) {
        self.envelopes.push(Envelope { sender: self.sender, receiver, msg });
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("barrier budget must be at least 1")]
    ZeroBudget,
    #[error("protocol violation: agent {sender} sent to non-neighbor {receiver}")]
    ProtocolViolation { sender: AgentId, receiver: AgentId },
    #[error("agent {agent} failed at barrier {barrier}: {message}")]
    Program { agent: AgentId, barrier: u64, message: String },
}

/// One agent state machine. `on_phase` runs once per barrier with a snapshot
/// of the mailbox; it must touch nothing but its own state, the context and
/// the outbox.
pub trait AgentProgram {
    type Msg: Payload + Clone;

    fn on_phase(
        &mut self,
        ctx: &AgentContext,
        barrier: u64,
        inbox: &[Envelope<Self::Msg>],
        out: &mut Outbox<Self::Msg>,
    ) -> Result<(), String>;

    /// Signals that this agent has no more work; the engine stops once every
    /// agent is finished.
    fn finished(&self) -> bool {
        false
    }

    /// Best-known global cost, reported by the tree root into the trace.
    fn anytime_cost(&self) -> Option<Cost> {
        None
    }

    /// Current algorithm iteration, reported by the tree root.
    fn iteration(&self) -> Option<u64> {
        None
    }

    /// The agent's current decision-variable value.
    fn decision_value(&self) -> Option<usize> {
        None
    }
}

/// Per-barrier trace record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarrierRow {
    pub barrier: u64,
    /// Envelopes sent by each agent during this phase.
    pub per_agent_msgs: Vec<u32>,
    pub payload_scalars: u64,
    /// Per message class: (class, messages, scalars).
    pub per_class: Vec<(&'static str, u32, u64)>,
    pub anytime_cost: Option<Cost>,
    pub iteration: Option<u64>,
}

impl BarrierRow {
    pub fn msgs_total(&self) -> u32 {
        self.per_agent_msgs.iter().sum()
    }

    pub fn class(&self, class: &str) -> Option<(u32, u64)> {
        self.per_class
            .iter()
            .find(|(c, _, _)| *c == class)
            .map(|&(_, m, s)| (m, s))
    }
}

/// Full run trace; barrier indices are strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTrace {
    pub rows: Vec<BarrierRow>,
}

impl RunTrace {
    /// CSV export: `barrier,agent_msgs_total,payload_bytes,anytime_cost`.
    /// Payload bytes count 8 bytes per carried scalar; `anytime_cost` is
    /// empty on barriers where none was reported.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "barrier,agent_msgs_total,payload_bytes,anytime_cost")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                row.barrier,
                row.msgs_total(),
                row.payload_scalars * 8,
                row.anytime_cost.map_or(String::new(), |c| c.to_string())
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// The simulator: one program instance per agent plus the mailboxes between
/// them. Within a phase the steps are mutually independent; the barrier is a
/// total synchronization point.
pub struct Engine<P: AgentProgram> {
    ctxs: Vec<AgentContext>,
    programs: Vec<P>,
    /// Messages to deliver at the next barrier.
    pending: Vec<Vec<Envelope<P::Msg>>>,
    neighbor_sets: Vec<Vec<AgentId>>,
    root: AgentId,
    barrier: u64,
    trace: RunTrace,
    step_order: Vec<usize>,
}

impl<P: AgentProgram> Engine<P> {
    /// Builds one agent per id with its context (local view + pseudo-tree
    /// slot) and a per-agent deterministic RNG seed.
    pub fn new(
        instance: &DcopInstance,
        seed: u64,
        mut factory: impl FnMut(&AgentContext) -> P,
    ) -> Self {
        let root = default_root(instance);
        let tree = build_bfs_tree(instance, root).expect("validated instances are connected");
        Self::with_tree(instance, &tree, seed, &mut factory)
    }

    pub fn with_tree(
        instance: &DcopInstance,
        tree: &PseudoTree,
        seed: u64,
        factory: &mut impl FnMut(&AgentContext) -> P,
    ) -> Self {
        let n = instance.agent_count();
        let ctxs: Vec<AgentContext> = (0..n)
            .map(|a| AgentContext {
                agent_id: a,
                n_agents: n,
                seed,
                view: instance.agent_view(a),
                tree_parent: tree.parent[a],
                tree_children: tree.children[a].clone(),
                tree_level: tree.level[a],
                tree_height: tree.height,
                subtree_height: tree.subtree_height[a],
                is_root: a == tree.root,
            })
            .collect();
        let programs = ctxs.iter().map(|ctx| factory(ctx)).collect();
        Engine {
            programs,
            pending: (0..n).map(|_| Vec::new()).collect(),
            neighbor_sets: (0..n).map(|a| instance.neighbors(a).collect()).collect(),
            root: tree.root,
            barrier: 0,
            trace: RunTrace::default(),
            step_order: (0..n).collect(),
        }
    }

    /// Testing hook: process agent steps in a custom order within each phase.
    /// Results must not depend on it.
    pub fn set_step_order(&mut self, order: Vec<usize>) {
        assert_eq!(order.len(), self.programs.len());
        self.step_order = order;
    }

    /// Runs a single phase: deliver pending messages, step every agent on its
    /// mailbox snapshot, collect and validate the outgoing envelopes.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let n = self.programs.len();
        let inboxes: Vec<Vec<Envelope<P::Msg>>> =
            self.pending.iter_mut().map(std::mem::take).collect();

        let mut outs: Vec<Vec<Envelope<P::Msg>>> = (0..n).map(|_| Vec::new()).collect();
        for &a in &self.step_order {
            let mut outbox = Outbox { sender: a, envelopes: Vec::new() };
            self.programs[a]
                .on_phase(&self.ctxs[a], self.barrier, &inboxes[a], &mut outbox)
                .map_err(|message| EngineError::Program {
                    agent: a,
                    barrier: self.barrier,
                    message,
                })?;
            outs[a] = outbox.envelopes;
        }

        let mut per_agent_msgs = vec![0u32; n];
        let mut per_class: Vec<(&'static str, u32, u64)> = Vec::new();
        let mut payload_scalars = 0u64;
        for (a, envelopes) in outs.into_iter().enumerate() {
            for env in envelopes {
                if !self.neighbor_sets[a].contains(&env.receiver) {
                    return Err(EngineError::ProtocolViolation {
                        sender: a,
                        receiver: env.receiver,
                    });
                }
                per_agent_msgs[a] += 1;
                let scalars = env.msg.scalar_count() as u64;
                payload_scalars += scalars;
                let class = env.msg.class();
                match per_class.iter_mut().find(|(c, _, _)| *c == class) {
                    Some(entry) => {
                        entry.1 += 1;
                        entry.2 += scalars;
                    }
                    None => per_class.push((class, 1, scalars)),
                }
                self.pending[env.receiver].push(env);
            }
        }
        // Mailbox contents must not depend on the step order.
        for mailbox in &mut self.pending {
            mailbox.sort_by_key(|e| e.sender);
        }

        self.trace.rows.push(BarrierRow {
            barrier: self.barrier,
            per_agent_msgs,
            payload_scalars,
            per_class,
            anytime_cost: self.programs[self.root].anytime_cost(),
            iteration: self.programs[self.root].iteration(),
        });
        self.barrier += 1;
        Ok(())
    }

    /// Runs phases until every agent signals termination or the budget is
    /// exhausted.
    pub fn run(&mut self, barrier_budget: u64) -> Result<(), EngineError> {
        if barrier_budget == 0 {
            return Err(EngineError::ZeroBudget);
        }
        for _ in 0..barrier_budget {
            if self.all_finished() {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn all_finished(&self) -> bool {
        self.programs.iter().all(|p| p.finished())
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn barrier(&self) -> u64 {
        self.barrier
    }

    pub fn root(&self) -> AgentId {
        self.root
    }

    pub fn program(&self, agent: AgentId) -> &P {
        &self.programs[agent]
    }

    pub fn programs(&self) -> &[P] {
        &self.programs
    }

    pub fn ctx(&self, agent: AgentId) -> &AgentContext {
        &self.ctxs[agent]
    }

    /// Snapshot of every agent's current decision value.
    pub fn decisions(&self) -> Vec<Option<usize>> {
        self.programs.iter().map(|p| p.decision_value()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::fig1;

    #[derive(Clone)]
    enum EchoMsg {
        Ping(u64),
    }

    impl Payload for EchoMsg {
        fn class(&self) -> &'static str {
            "ping"
        }
        fn scalar_count(&self) -> usize {
            1
        }
    }

    /// Two agents bounce one message per phase; agent 0 starts.
    struct Echo;

    impl AgentProgram for Echo {
        type Msg = EchoMsg;

        fn on_phase(
            &mut self,
            ctx: &AgentContext,
            barrier: u64,
            inbox: &[Envelope<EchoMsg>],
            out: &mut Outbox<EchoMsg>,
        ) -> Result<(), String> {
            if barrier == 0 {
                if ctx.agent_id == 0 {
                    out.send(ctx.neighbors()[0], EchoMsg::Ping(0));
                }
                return Ok(());
            }
            for env in inbox {
                let EchoMsg::Ping(v) = env.msg;
                out.send(env.sender, EchoMsg::Ping(v + 1));
            }
            Ok(())
        }
    }

    fn two_agent_instance() -> crate::model::DcopInstance {
        crate::model::DcopInstance::validate(crate::model::RawInstance {
            agents: 2,
            domains: vec![2, 2],
            constraints: vec![crate::model::RawConstraint {
                i: 0,
                j: 1,
                table: vec![vec![0, 0], vec![0, 0]],
            }],
            global_cap: None,
            meta: None,
        })
        .unwrap()
    }

    #[test]
    fn echo_one_message_per_barrier() {
        let inst = two_agent_instance();
        let mut engine = Engine::new(&inst, 7, |_| Echo);
        engine.run(5).unwrap();
        assert_eq!(engine.trace().rows.len(), 5);
        for row in &engine.trace().rows {
            assert_eq!(row.msgs_total(), 1);
            assert_eq!(row.payload_scalars, 1);
        }
    }

    #[test]
    fn zero_budget_is_an_error() {
        let inst = two_agent_instance();
        let mut engine = Engine::new(&inst, 7, |_| Echo);
        assert!(matches!(engine.run(0), Err(EngineError::ZeroBudget)));
    }

    struct BadSender;

    impl AgentProgram for BadSender {
        type Msg = EchoMsg;
        fn on_phase(
            &mut self,
            ctx: &AgentContext,
            _barrier: u64,
            _inbox: &[Envelope<EchoMsg>],
            out: &mut Outbox<EchoMsg>,
        ) -> Result<(), String> {
            if ctx.agent_id == 0 {
                // Agent 3 is not a neighbor of agent 0 in fig1.
                out.send(3, EchoMsg::Ping(0));
            }
            Ok(())
        }
    }

    #[test]
    fn non_neighbor_send_is_fatal() {
        let inst = fig1();
        let mut engine = Engine::new(&inst, 7, |_| BadSender);
        match engine.run(3) {
            Err(EngineError::ProtocolViolation { sender: 0, receiver: 3 }) => {}
            other => panic!("expected protocol violation, got {other:?}"),
        }
    }

    /// Program whose behavior would expose ordering or seed-derivation bugs:
    /// every agent draws from its stream and gossips the draws around.
    struct Gossip {
        acc: u64,
    }

    impl AgentProgram for Gossip {
        type Msg = EchoMsg;
        fn on_phase(
            &mut self,
            ctx: &AgentContext,
            barrier: u64,
            inbox: &[Envelope<EchoMsg>],
            out: &mut Outbox<EchoMsg>,
        ) -> Result<(), String> {
            use rand::Rng;
            for env in inbox {
                let EchoMsg::Ping(v) = env.msg;
                self.acc = self.acc.wrapping_mul(31).wrapping_add(v);
            }
            let draw = ctx.rng("gossip", barrier).random::<u64>() >> 32;
            self.acc = self.acc.wrapping_add(draw);
            for &nbr in ctx.neighbors() {
                out.send(nbr, EchoMsg::Ping(self.acc));
            }
            Ok(())
        }

        fn anytime_cost(&self) -> Option<Cost> {
            Some((self.acc % 1000) as Cost)
        }
    }

    #[test]
    fn trace_identical_across_runs_and_step_orders() {
        let inst = fig1();
        let run = |order: Option<Vec<usize>>| {
            let mut engine = Engine::new(&inst, 42, |_| Gossip { acc: 0 });
            if let Some(order) = order {
                engine.set_step_order(order);
            }
            engine.run(8).unwrap();
            engine.trace().to_csv_string()
        };
        let base = run(None);
        assert_eq!(base, run(None));
        assert_eq!(base, run(Some(vec![3, 1, 0, 2])));
        assert_eq!(base, run(Some(vec![2, 3, 1, 0])));
    }

    #[test]
    fn derive_rng_streams_differ() {
        use rand::Rng;
        let a: u64 = derive_rng(1, 0, "x", 0).random();
        let b: u64 = derive_rng(1, 1, "x", 0).random();
        let c: u64 = derive_rng(1, 0, "y", 0).random();
        let d: u64 = derive_rng(2, 0, "x", 0).random();
        let e: u64 = derive_rng(1, 0, "x", 1).random();
        let all = [a, b, c, d, e];
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        // And stable for equal inputs.
        let a2: u64 = derive_rng(1, 0, "x", 0).random();
        assert_eq!(a, a2);
    }
}
