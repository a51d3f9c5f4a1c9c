"""Round-based message harness between household agents and the chain.

Each trading iteration is simulated as a discrete-tick event sequence:
the chain's dual state goes out to every agent over a per-link latency,
each agent solves its local problem and sends a trading transaction
back, the scheduled authority seals a block once the last transaction
arrives, and the block application triggers the dual update.  A fixed
seed fixes every latency draw, so the full tick-by-tick event log is
reproducible; arrival order never matters because the update only runs
on the complete trade map.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentRuntime
from .chain import Chain, digest, service_tx, trading_tx
from .coordinator import AlgoConfig, DualState, PairMap
from .model import Tariff


class SimError(Exception):
    pass


class RoundTimeout(SimError):
    """An agent failed to deliver its trades before the round deadline."""

    def __init__(self, agent: str, deadline: int):
        self.agent = agent
        self.deadline = deadline
        super().__init__(
            f"agent {agent!r} silent past tick {deadline}; round aborted")


@dataclass
class NetConfig:
    """Per-link delivery delays in simulated ticks.

    latency is either a fixed tick count or an inclusive (lo, hi) range
    drawn uniformly per message; overrides substitute per-node values.
    The timeout must exceed the largest possible single-link delay.
    """

    latency: object = (1, 5)
    timeout: int = 50
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        worst = self.max_latency()
        if self.timeout <= worst:
            raise SimError(
                f"timeout {self.timeout} must exceed max latency {worst}")

    def link(self, node: str):
        return self.overrides.get(node, self.latency)

    def max_latency(self) -> int:
        links = [self.latency] + list(self.overrides.values())
        return max(v[1] if isinstance(v, tuple) else v for v in links)


def _draw(rng, delay) -> int:
    if isinstance(delay, tuple):
        lo, hi = delay
        return int(rng.integers(lo, hi + 1))
    return int(delay)


@dataclass
class EventRecord:
    tick: int
    kind: str
    node: str
    ref: str


def write_events(events, path):
    with open(path, "w") as fh:
        fh.write("# tick\tkind\tnode\tref\n")
        for ev in events:
            fh.write(f"{ev.tick}\t{ev.kind}\t{ev.node}\t{ev.ref}\n")


@dataclass
class RoundOutcome:
    trades: PairMap
    block: object
    end_tick: int


def run_round(k: int, agents: dict, chain: Chain, cfg: NetConfig, rng,
              start_tick: int = 0, events: list | None = None
              ) -> RoundOutcome:
    """Simulate one full trading iteration over the network.

    Delivers each agent its dual slice, collects every trading
    transaction, and seals the block (which runs the dual update) at the
    last arrival.  Raises RoundTimeout naming the first silent agent if
    any transaction would land after start_tick + cfg.timeout.
    """
    state = chain.state()
    if state.round != k:
        raise SimError(f"chain is at round {state.round}, expected {k}")
    if sorted(agents) != state.users:
        raise SimError("agent set does not match chain users")
    log = events if events is not None else []
    deadline = start_tick + cfg.timeout
    heap = []
    seq = 0
    # All latency draws happen here in sorted-agent order, so the random
    # stream is identical no matter how the events later interleave.
    up_lat = {}
    for u in sorted(agents):
        down = _draw(rng, cfg.link(u))
        up_lat[u] = _draw(rng, cfg.link(u))
        heapq.heappush(heap, (start_tick + down, 0, seq, "deliver", u))
        seq += 1
    heapq.heappush(heap, (deadline, 1, seq, "timeout", ""))
    seq += 1
    trades: PairMap = {}
    arrived = set()
    last_arrival = start_tick
    while heap:
        tick, _, _, kind, u = heapq.heappop(heap)
        if kind == "deliver":
            dual = chain.contract_call("read_dual", user=u)
            log.append(EventRecord(tick, "deliver", u,
                                   digest({v: dual.aux[v] for v in dual.aux})))
            per_peer = agents[u].solve_round(dual)
            log.append(EventRecord(
                tick, "solve", u,
                digest({v: vec for v, vec in sorted(per_peer.items())})))
            tx = trading_tx(u, chain.next_nonce(u), per_peer)
            arrival = tick + up_lat[u]
            if arrival > deadline:
                raise RoundTimeout(u, deadline)
            heapq.heappush(heap, (arrival, 0, seq, "arrive", (u, tx)))
            seq += 1
        elif kind == "arrive":
            u, tx = u
            chain.submit_tx(tx)
            arrived.add(u)
            last_arrival = max(last_arrival, tick)
            for v, vec in tx.payload["trades"].items():
                trades[(u, v)] = np.asarray(vec, float)
            log.append(EventRecord(tick, "arrive", u, tx.txid))
        elif kind == "timeout":
            missing = sorted(set(agents) - arrived)
            if missing:
                raise RoundTimeout(missing[0], deadline)
    block = chain.produce_block(chain.scheduled_proposer())
    log.append(EventRecord(last_arrival, "block", block.proposer,
                           block.digest))
    return RoundOutcome(trades=trades, block=block, end_tick=last_arrival)


class ChainTransport:
    """Message channel for the trading loop that routes through the chain.

    Drop-in replacement for the in-process transport: each exchange runs
    one simulated network round, and the driver's dual state is checked
    bit-for-bit against the contract's own update after every block, so
    any divergence between the two code paths fails loudly.
    """

    def __init__(self, profiles, tariff: Tariff, cfg: AlgoConfig,
                 net: NetConfig | None = None, chain: Chain | None = None,
                 authorities=None, qp_settings=None):
        profiles = sorted(profiles, key=lambda p: p.user_id)
        ids = [p.user_id for p in profiles]
        horizon = profiles[0].horizon
        cap = cfg.trade_cap
        if cap is None:
            cap = max(p.fuse_limit for p in profiles)
        self.agents = {
            p.user_id: AgentRuntime(
                p, tariff, [v for v in ids if v != p.user_id],
                cfg.rho, cap, settings=qp_settings)
            for p in profiles}
        if chain is None:
            if authorities is None:
                authorities = [f"auth{i}" for i in range(5)]
            chain = Chain(ids, authorities, horizon, rho=cfg.rho)
        self.chain = chain
        self.net = net if net is not None else NetConfig()
        self.rng = np.random.default_rng(self.net.seed)
        self.events: list[EventRecord] = []
        self.tick = 0
        self.rounds = 0

    def exchange(self, state: DualState) -> PairMap:
        self._check_against_chain(state)
        outcome = run_round(self.rounds, self.agents, self.chain, self.net,
                            self.rng, start_tick=self.tick,
                            events=self.events)
        self.tick = outcome.end_tick + 1
        self.rounds += 1
        return outcome.trades

    def on_state(self, state: DualState):
        self._check_against_chain(state)

    def _check_against_chain(self, state: DualState):
        committed = self.chain.state()
        if committed.round != state.iteration:
            raise SimError(
                f"driver at iteration {state.iteration} but chain at "
                f"round {committed.round}")
        for k in state.aux:
            if not (np.array_equal(state.aux[k], committed.aux[k])
                    and np.array_equal(state.mult[k], committed.mult[k])):
                raise SimError(
                    f"dual state for pair {k} disagrees with the contract")

    def schedules(self):
        return {u: a.schedule for u, a in self.agents.items()}

    def costs(self):
        return {u: a.cost for u, a in self.agents.items()}

    # -- post-convergence -------------------------------------------------

    def finalize(self, schedules: dict, tariff: Tariff) -> list:
        """Record service commitments on chain, then settle in tokens."""
        last = self.tick
        for u in sorted(schedules):
            s = schedules[u]
            lat = _draw(self.rng, self.net.link(u))
            tick = self.tick + lat
            tx = service_tx(u, self.chain.next_nonce(u),
                            s.e_fit, s.e_dr, s.e_as)
            self.chain.submit_tx(tx)
            self.events.append(EventRecord(tick, "service", u, tx.txid))
            last = max(last, tick)
        block = self.chain.produce_block(self.chain.scheduled_proposer())
        self.events.append(EventRecord(last, "block", block.proposer,
                                       block.digest))
        transfers = self.chain.settle(schedules, tariff)
        ref = self.chain.blocks[-1].digest if transfers else "none"
        self.events.append(EventRecord(last + 1, "settle",
                                       self.chain.operator, ref))
        self.tick = last + 2
        return transfers

    def save_events(self, path):
        write_events(self.events, path)
