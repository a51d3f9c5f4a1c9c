"""Simulated proof-of-authority ledger hosting the coordination contract.

The chain is a deterministic state machine: a committee of named
authorities takes turns producing blocks, each block drains the pending
transaction pool in (sender, nonce) order, and every state transition is
a pure function of the parent state and the ordered transactions.  The
contract storage holds the trading coordination state (trades, auxiliary
trades, multipliers, round counter) plus token balances, and its digest
is committed in each block as the state root, so the whole history can
be replayed and byte-checked from the log alone.

There is no cryptography here beyond content digests: sender identity is
taken at face value, which is the appropriate level of fidelity for a
desk-scale protocol study.
"""

import copy
import hashlib
import json
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .coordinator import DualState, dual_update, lambda_update
from .agent import DualSlice
from .model import Schedule, Tariff

TX_SERVICE = "service"
TX_TRADING = "trading"
TX_TRANSFER = "transfer"
TX_KINDS = (TX_SERVICE, TX_TRADING, TX_TRANSFER)

RECORD_GENESIS = "genesis"
RECORD_BLOCK = "block"
RECORD_COMMITTEE = "committee"


class ChainError(Exception):
    pass


class TxRejected(ChainError):
    """Transaction refused at submission (bad sender, nonce, or payload)."""


class ProposerError(ChainError):
    """Block production attempted by a node that is not scheduled."""


class VoteError(ChainError):
    """Malformed or unauthorized committee membership proposal."""


class ContractError(ChainError):
    """Contract function precondition violated."""


class SettlementError(ChainError):
    """Settlement aborted; no transfers were applied."""


class CorruptionError(ChainError):
    """Replay found a record that does not match its recorded digest."""

    def __init__(self, height, detail):
        self.height = height
        self.detail = detail
        where = "genesis" if height is None else f"block {height}"
        super().__init__(f"chain log corrupt at {where}: {detail}")


# ---------------------------------------------------------------------------
# canonical serialization
# ---------------------------------------------------------------------------

def _plain(obj):
    """Recursively convert to plain JSON-encodable python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if obj is None or isinstance(obj, (str, bool)):
        return obj
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical(obj) -> bytes:
    """Canonical JSON bytes: sorted keys, minimal separators, repr floats.

    Python's json encoder renders floats with repr, which round-trips
    float64 exactly, so equal states always produce identical bytes.
    """
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"),
                      allow_nan=False).encode()


def digest(obj) -> str:
    return hashlib.sha256(canonical(obj)).hexdigest()


def pair_key(u: str, v: str) -> str:
    return f"{u}|{v}"


def split_pair(key: str):
    u, v = key.split("|")
    return u, v


# ---------------------------------------------------------------------------
# transactions and blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    sender: str
    nonce: int
    kind: str
    payload: dict
    txid: str

    def to_record(self) -> dict:
        return {"sender": self.sender, "nonce": self.nonce,
                "kind": self.kind, "payload": _plain(self.payload),
                "txid": self.txid}


def _tx_id(sender, nonce, kind, payload) -> str:
    return digest({"sender": sender, "nonce": nonce, "kind": kind,
                   "payload": payload})


def make_tx(sender: str, nonce: int, kind: str, payload: dict) -> Transaction:
    payload = _plain(payload)
    return Transaction(sender=sender, nonce=int(nonce), kind=kind,
                       payload=payload,
                       txid=_tx_id(sender, int(nonce), kind, payload))


def service_tx(sender, nonce, e_fit, e_dr, e_as) -> Transaction:
    payload = {"e_fit": np.asarray(e_fit, float),
               "e_dr": np.asarray(e_dr, float),
               "e_as": np.asarray(e_as, float)}
    return make_tx(sender, nonce, TX_SERVICE, payload)


def trading_tx(sender, nonce, trades: dict) -> Transaction:
    payload = {"user": sender,
               "trades": {v: np.asarray(vec, float)
                          for v, vec in sorted(trades.items())}}
    return make_tx(sender, nonce, TX_TRADING, payload)


def transfer_tx(sender, nonce, to, amount) -> Transaction:
    return make_tx(sender, nonce, TX_TRANSFER,
                   {"from": sender, "to": to, "amount": float(amount)})


@dataclass(frozen=True)
class Block:
    height: int
    parent: str
    proposer: str
    txs: tuple
    state_root: str
    digest: str

    def to_record(self) -> dict:
        return {"type": RECORD_BLOCK, "height": self.height,
                "parent": self.parent, "proposer": self.proposer,
                "txs": [t.to_record() for t in self.txs],
                "state_root": self.state_root, "digest": self.digest}


def _block_digest(height, parent, proposer, txids, state_root) -> str:
    return digest({"height": height, "parent": parent, "proposer": proposer,
                   "txids": list(txids), "state_root": state_root})


def seal_block(height, parent, proposer, txs, state_root) -> Block:
    d = _block_digest(height, parent, proposer,
                      [t.txid for t in txs], state_root)
    return Block(height=height, parent=parent, proposer=proposer,
                 txs=tuple(txs), state_root=state_root, digest=d)


# ---------------------------------------------------------------------------
# contract storage
# ---------------------------------------------------------------------------

class ContractState:
    """Coordination contract storage plus token accounts.

    Exposes the three contract entry points through call(): set_trading,
    compute_dual, read_dual.  compute_dual delegates to the coordination
    module's pure update functions, so the on-chain arithmetic is the
    same float64 arithmetic the driver uses, down to the last bit.
    """

    def __init__(self, users, horizon: int, rho: float, balances: dict):
        users = sorted(users)
        if len(users) != len(set(users)):
            raise ChainError("duplicate user ids")
        self.users = users
        self.horizon = int(horizon)
        self.rho = float(rho)
        self.round = 0
        self.trades = {(u, v): np.zeros(self.horizon)
                       for u in users for v in users if u != v}
        self.aux = {k: np.zeros(self.horizon) for k in self.trades}
        self.mult = {k: np.zeros(self.horizon) for k in self.trades}
        self.balances = {str(a): float(b) for a, b in balances.items()}
        self.services: dict[str, dict] = {}
        self.submitted: set[str] = set()

    # -- the three contract functions ------------------------------------

    def call(self, fn: str, **kwargs):
        if fn == "set_trading":
            return self._set_trading(**kwargs)
        if fn == "compute_dual":
            return self._compute_dual(**kwargs)
        if fn == "read_dual":
            return self._read_dual(**kwargs)
        raise ContractError(f"unknown contract function {fn!r}")

    def _set_trading(self, user: str, trades: dict):
        if user not in self.users:
            raise ContractError(f"unknown user {user!r}")
        if user in self.submitted:
            raise ContractError(
                f"{user} already submitted trades for round {self.round}")
        peers = sorted(u for u in self.users if u != user)
        if sorted(trades) != peers:
            raise ContractError(
                f"trades for {user} must cover peers {peers}")
        for v, vec in trades.items():
            vec = np.asarray(vec, float)
            if vec.shape != (self.horizon,):
                raise ContractError(
                    f"trade vector {user}->{v} has length {vec.size}, "
                    f"expected {self.horizon}")
            self.trades[(user, v)] = vec.copy()
        self.submitted.add(user)

    def _compute_dual(self):
        missing = sorted(set(self.users) - self.submitted)
        if missing:
            raise ContractError(
                f"round {self.round} incomplete, missing trades from "
                f"{', '.join(missing)}")
        state = DualState(aux=self.aux, mult=self.mult, rho=self.rho,
                          iteration=self.round)
        new_aux = dual_update(self.trades, state)
        new_mult = lambda_update(state, new_aux, self.trades)
        self.aux = new_aux
        self.mult = new_mult
        self.round += 1
        self.submitted = set()
        return self.round

    def _read_dual(self, user: str) -> DualSlice:
        if user not in self.users:
            raise ContractError(f"unknown user {user!r}")
        state = DualState(aux=self.aux, mult=self.mult, rho=self.rho,
                          iteration=self.round)
        return state.slice_for(user)

    # -- serialization ----------------------------------------------------

    def payload(self) -> dict:
        return {
            "users": list(self.users),
            "horizon": self.horizon,
            "rho": self.rho,
            "round": self.round,
            "trades": {pair_key(u, v): vec
                       for (u, v), vec in sorted(self.trades.items())},
            "aux": {pair_key(u, v): vec
                    for (u, v), vec in sorted(self.aux.items())},
            "mult": {pair_key(u, v): vec
                     for (u, v), vec in sorted(self.mult.items())},
            "balances": dict(sorted(self.balances.items())),
            "services": {u: s for u, s in sorted(self.services.items())},
            "submitted": sorted(self.submitted),
        }

    def root(self) -> str:
        return digest(self.payload())

    def copy(self) -> "ContractState":
        return copy.deepcopy(self)

    @classmethod
    def from_payload(cls, p: dict) -> "ContractState":
        st = cls(users=p["users"], horizon=p["horizon"], rho=p["rho"],
                 balances=p["balances"])
        st.round = int(p["round"])
        for key, vec in p["trades"].items():
            st.trades[split_pair(key)] = np.asarray(vec, float)
        for key, vec in p["aux"].items():
            st.aux[split_pair(key)] = np.asarray(vec, float)
        for key, vec in p["mult"].items():
            st.mult[split_pair(key)] = np.asarray(vec, float)
        st.services = {u: {k: np.asarray(v, float) for k, v in s.items()}
                       for u, s in p["services"].items()}
        st.submitted = set(p["submitted"])
        return st


def apply_tx(state: ContractState, tx: Transaction):
    """Apply one committed transaction to contract storage.

    A trading transaction that completes the round triggers the dual
    update in place, so the coordination step is itself an effect of
    ordered transactions and replays identically.
    """
    if tx.kind == TX_SERVICE:
        state.services[tx.sender] = {
            "e_fit": np.asarray(tx.payload["e_fit"], float),
            "e_dr": np.asarray(tx.payload["e_dr"], float),
            "e_as": np.asarray(tx.payload["e_as"], float)}
    elif tx.kind == TX_TRADING:
        state.call("set_trading", user=tx.payload["user"],
                   trades=tx.payload["trades"])
        if state.submitted == set(state.users):
            state.call("compute_dual")
    elif tx.kind == TX_TRANSFER:
        src = tx.payload["from"]
        dst = tx.payload["to"]
        amount = float(tx.payload["amount"])
        if state.balances.get(src, 0.0) < amount:
            raise ChainError(
                f"transfer of {amount} overdraws account {src!r}")
        state.balances[src] = state.balances.get(src, 0.0) - amount
        state.balances[dst] = state.balances.get(dst, 0.0) + amount
    else:
        raise ChainError(f"unknown transaction kind {tx.kind!r}")


# ---------------------------------------------------------------------------
# the chain
# ---------------------------------------------------------------------------

class Chain:
    """Proof-of-authority chain with round-robin block production.

    Authorities rotate as proposers by height.  Committee changes pass by
    strict majority vote and take effect atomically at the next block
    boundary, before the proposer check.  All record types (genesis,
    committee changes, blocks) append to an in-memory log that save_log
    persists as length-prefixed canonical JSON.
    """

    def __init__(self, users, authorities, horizon: int, rho: float = 1.0,
                 operator: str = "operator", operator_balance: float = 1e6,
                 user_balance: float = 100.0):
        users = sorted(users)
        authorities = list(authorities)
        if not authorities:
            raise ChainError("authority committee cannot be empty")
        if len(set(authorities)) != len(authorities):
            raise ChainError("duplicate authority ids")
        if operator in users:
            raise ChainError("operator account cannot also be a user")
        balances = {operator: float(operator_balance)}
        for u in users:
            balances[u] = float(user_balance)
        self.operator = operator
        self._state = ContractState(users, horizon, rho, balances)
        self._accounts = set(users) | {operator}
        self._nonces: dict[str, int] = {}
        self._committee = list(authorities)
        self._target = list(authorities)
        self._pool: list[Transaction] = []
        self._lock = threading.Lock()
        self.blocks: list[Block] = []
        self.records: list[dict] = [{
            "type": RECORD_GENESIS,
            "authorities": list(authorities),
            "operator": operator,
            "state": self._state.payload(),
            "state_root": self._state.root(),
        }]

    # -- read side --------------------------------------------------------

    @property
    def height(self) -> int:
        return len(self.blocks)

    def authorities(self) -> tuple:
        return tuple(self._committee)

    def state(self) -> ContractState:
        """Snapshot of committed contract storage."""
        with self._lock:
            return self._state.copy()

    def contract_call(self, fn: str, **kwargs):
        """Read-only contract access against committed state."""
        if fn != "read_dual":
            raise ContractError(
                f"{fn} mutates state and must go through transactions")
        with self._lock:
            return self._state.call(fn, **kwargs)

    def tip(self) -> str:
        return self.blocks[-1].digest if self.blocks \
            else self.records[0]["state_root"]

    def scheduled_proposer(self) -> str:
        committee = self._target
        return committee[self.height % len(committee)]

    def next_nonce(self, sender: str) -> int:
        return self._nonces.get(sender, -1) + 1

    def tx_counts(self) -> list:
        return [len(b.txs) for b in self.blocks]

    # -- write side -------------------------------------------------------

    def submit_tx(self, tx: Transaction) -> str:
        with self._lock:
            if tx.sender not in self._accounts:
                raise TxRejected(f"unknown sender {tx.sender!r}")
            last = self._nonces.get(tx.sender, -1)
            if tx.nonce <= last:
                raise TxRejected(
                    f"nonce {tx.nonce} for {tx.sender} not above {last}")
            if tx.kind not in TX_KINDS:
                raise TxRejected(f"unknown transaction kind {tx.kind!r}")
            self._validate_payload(tx)
            if tx.txid != _tx_id(tx.sender, tx.nonce, tx.kind, tx.payload):
                raise TxRejected("transaction id does not match content")
            self._nonces[tx.sender] = tx.nonce
            self._pool.append(tx)
            return tx.txid

    def _validate_payload(self, tx: Transaction):
        p = tx.payload
        if tx.kind == TX_TRANSFER:
            if set(p) != {"from", "to", "amount"}:
                raise TxRejected("malformed transfer payload")
            if p["from"] != tx.sender:
                raise TxRejected("transfer source must be the sender")
            if p["to"] not in self._accounts:
                raise TxRejected(f"unknown transfer recipient {p['to']!r}")
            if not np.isfinite(p["amount"]) or p["amount"] < 0:
                raise TxRejected(f"bad transfer amount {p['amount']!r}")
        elif tx.kind == TX_TRADING:
            if set(p) != {"user", "trades"}:
                raise TxRejected("malformed trading payload")
            if p["user"] != tx.sender:
                raise TxRejected("trading user must be the sender")
            for vec in p["trades"].values():
                if len(vec) != self._state.horizon:
                    raise TxRejected("trade vector length mismatch")
                if not all(np.isfinite(x) for x in vec):
                    raise TxRejected("non-finite trade value")
        elif tx.kind == TX_SERVICE:
            if set(p) != {"e_fit", "e_dr", "e_as"}:
                raise TxRejected("malformed service payload")
            if tx.sender not in self._state.users:
                raise TxRejected("service sender is not a user")
            for key in ("e_fit", "e_dr", "e_as"):
                if len(p[key]) != self._state.horizon:
                    raise TxRejected(f"{key} length mismatch")
                if not all(np.isfinite(x) for x in p[key]):
                    raise TxRejected(f"non-finite value in {key}")

    def produce_block(self, proposer: str) -> Block:
        with self._lock:
            if self._target != self._committee:
                self._committee = list(self._target)
                self.records.append({
                    "type": RECORD_COMMITTEE,
                    "height": self.height,
                    "authorities": list(self._committee)})
            scheduled = self._committee[self.height % len(self._committee)]
            if proposer != scheduled:
                raise ProposerError(
                    f"proposer for height {self.height} is {scheduled!r}, "
                    f"not {proposer!r}")
            txs = sorted(self._pool, key=lambda t: (t.sender, t.nonce))
            work = self._state.copy()
            for tx in txs:
                apply_tx(work, tx)
            block = seal_block(self.height, self.tip(), proposer, txs,
                               work.root())
            self._state = work
            self._pool = []
            self.blocks.append(block)
            self.records.append(block.to_record())
            return block

    def vote_membership(self, action: str, node: str, proposed_by: str,
                        votes: dict) -> bool:
        """Strict-majority committee change, queued to the next boundary."""
        with self._lock:
            if proposed_by not in self._target:
                raise VoteError(
                    f"{proposed_by!r} is not an authority and cannot "
                    "propose membership changes")
            if action == "add":
                if node in self._target:
                    raise VoteError(f"{node!r} is already an authority")
            elif action == "remove":
                if node not in self._target:
                    raise VoteError(f"{node!r} is not an authority")
                if len(self._target) == 1:
                    raise VoteError("cannot remove the last authority")
            else:
                raise VoteError(f"unknown membership action {action!r}")
            yes = sum(1 for a, v in votes.items()
                      if v and a in self._target)
            passed = yes > len(self._target) / 2
            if passed:
                if action == "add":
                    self._target = self._target + [node]
                else:
                    self._target = [a for a in self._target if a != node]
            return passed

    # -- settlement -------------------------------------------------------

    def settle(self, schedules: dict, tariff: Tariff,
               operator: str | None = None) -> list:
        """Pay out converged schedules in tokens, atomically.

        One transfer per unordered trading pair (buyer pays seller the
        net peer-to-peer bill) plus one operator payment per user for
        feed-in, demand-response and ancillary-service rewards.  The
        whole batch is simulated against committed balances first; if
        any account would overdraw, nothing is submitted.
        """
        operator = operator or self.operator
        if operator not in self._accounts:
            raise SettlementError(f"unknown operator account {operator!r}")
        planned: list[tuple] = []
        for u in sorted(schedules):
            s: Schedule = schedules[u]
            reward = float(
                tariff.pi_fit * np.sum(s.e_fit)
                + np.dot(np.asarray(tariff.pi_dr, float), s.e_dr)
                + np.dot(np.asarray(tariff.pi_as, float), s.e_as))
            if reward != 0.0:
                planned.append((operator, u, reward))
        users = sorted(schedules)
        for i, u in enumerate(users):
            for v in users[i + 1:]:
                p_uv = np.asarray(schedules[u].trades.get(v, ()), float)
                p_vu = np.asarray(schedules[v].trades.get(u, ()), float)
                bought = float(np.sum(np.maximum(p_uv, 0.0))) if p_uv.size \
                    else 0.0
                sold = float(np.sum(np.maximum(p_vu, 0.0))) if p_vu.size \
                    else 0.0
                net = tariff.pi_p2p * (bought - sold)
                if net > 0.0:
                    planned.append((u, v, net))
                elif net < 0.0:
                    planned.append((v, u, -net))
        if not planned:
            return []
        with self._lock:
            nonces = dict(self._nonces)
            txs = []
            for src, dst, amount in planned:
                nonce = nonces.get(src, -1) + 1
                nonces[src] = nonce
                txs.append(transfer_tx(src, nonce, dst, amount))
            trial = dict(self._state.balances)
            for tx in sorted(txs, key=lambda t: (t.sender, t.nonce)):
                src = tx.payload["from"]
                amount = tx.payload["amount"]
                trial[src] = trial.get(src, 0.0) - amount
                if trial[src] < 0.0:
                    raise SettlementError(
                        f"account {src!r} short by {-trial[src]:.6g} "
                        "tokens; settlement aborted")
                dst = tx.payload["to"]
                trial[dst] = trial.get(dst, 0.0) + amount
        for tx in txs:
            self.submit_tx(tx)
        self.produce_block(self.scheduled_proposer())
        return txs

    # -- persistence ------------------------------------------------------

    def save_log(self, path):
        with open(path, "wb") as fh:
            for record in self.records:
                data = canonical(record)
                fh.write(struct.pack(">I", len(data)))
                fh.write(data)


def load_log(path) -> list:
    """Read length-prefixed records back; truncation is corruption."""
    records = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise CorruptionError(None, "truncated length prefix")
            (n,) = struct.unpack(">I", head)
            data = fh.read(n)
            if len(data) < n:
                raise CorruptionError(None, "truncated record body")
            try:
                records.append(json.loads(data.decode()))
            except ValueError as exc:
                raise CorruptionError(None, f"undecodable record: {exc}")
    return records


def replay(source) -> ContractState:
    """Rebuild contract state from a chain log, verifying every digest.

    Accepts a path or an already-loaded record list.  Raises
    CorruptionError naming the first block whose transactions, state
    root, or seal disagree with the recorded values.
    """
    records = load_log(source) if not isinstance(source, list) else source
    if not records or records[0].get("type") != RECORD_GENESIS:
        raise CorruptionError(None, "log does not start with genesis")
    genesis = records[0]
    state = ContractState.from_payload(genesis["state"])
    if state.root() != genesis["state_root"]:
        raise CorruptionError(None, "genesis state root mismatch")
    committee = list(genesis["authorities"])
    parent = genesis["state_root"]
    height = 0
    for record in records[1:]:
        kind = record.get("type")
        if kind == RECORD_COMMITTEE:
            if record["height"] != height:
                raise CorruptionError(
                    height, "committee change at unexpected height")
            committee = list(record["authorities"])
            continue
        if kind != RECORD_BLOCK:
            raise CorruptionError(height, f"unknown record type {kind!r}")
        if record["height"] != height:
            raise CorruptionError(
                height, f"expected height {height}, found {record['height']}")
        if record["parent"] != parent:
            raise CorruptionError(height, "parent digest mismatch")
        expected = committee[height % len(committee)]
        if record["proposer"] != expected:
            raise CorruptionError(
                height, f"proposer {record['proposer']!r} is not the "
                f"scheduled {expected!r}")
        txs = []
        for raw in record["txs"]:
            recomputed = _tx_id(raw["sender"], raw["nonce"], raw["kind"],
                                raw["payload"])
            if recomputed != raw["txid"]:
                raise CorruptionError(
                    height, f"transaction id mismatch for "
                    f"{raw['sender']}:{raw['nonce']}")
            txs.append(Transaction(sender=raw["sender"], nonce=raw["nonce"],
                                   kind=raw["kind"], payload=raw["payload"],
                                   txid=raw["txid"]))
        for tx in txs:
            apply_tx(state, tx)
        root = state.root()
        if root != record["state_root"]:
            raise CorruptionError(height, "state root mismatch")
        seal = _block_digest(height, parent, record["proposer"],
                             [t.txid for t in txs], root)
        if seal != record["digest"]:
            raise CorruptionError(height, "block digest mismatch")
        parent = record["digest"]
        height += 1
    return state


def dump_text(source) -> str:
    """Render a chain log as human-readable structured text."""
    records = load_log(source) if not isinstance(source, list) else source
    lines = []
    for record in records:
        kind = record.get("type")
        if kind == RECORD_GENESIS:
            state = record["state"]
            lines.append("genesis")
            lines.append(f"  operator   {record['operator']}")
            lines.append(f"  authorities {' '.join(record['authorities'])}")
            lines.append(f"  users      {' '.join(state['users'])}")
            lines.append(f"  horizon    {state['horizon']}  "
                         f"rho {state['rho']}")
            for acct, bal in sorted(state["balances"].items()):
                lines.append(f"  balance    {acct:<12} {bal}")
            lines.append(f"  state_root {record['state_root']}")
        elif kind == RECORD_COMMITTEE:
            lines.append(f"committee change before block {record['height']}")
            lines.append(f"  authorities {' '.join(record['authorities'])}")
        elif kind == RECORD_BLOCK:
            lines.append(f"block {record['height']}  "
                         f"proposer {record['proposer']}  "
                         f"txs {len(record['txs'])}")
            lines.append(f"  parent     {record['parent']}")
            for raw in record["txs"]:
                summary = _tx_summary(raw)
                lines.append(f"  tx {raw['txid'][:16]}  {summary}")
            lines.append(f"  state_root {record['state_root']}")
            lines.append(f"  digest     {record['digest']}")
        else:
            lines.append(f"unknown record type {kind!r}")
    return "\n".join(lines) + "\n"


def _tx_summary(raw: dict) -> str:
    kind = raw["kind"]
    p = raw["payload"]
    if kind == TX_TRANSFER:
        return (f"transfer {p['from']} -> {p['to']}  "
                f"amount {p['amount']:.6g}")
    if kind == TX_TRADING:
        peers = " ".join(sorted(p["trades"]))
        return f"trading {p['user']} nonce {raw['nonce']}  peers {peers}"
    if kind == TX_SERVICE:
        tot = sum(sum(p[k]) for k in ("e_fit", "e_dr", "e_as"))
        return (f"service {raw['sender']} nonce {raw['nonce']}  "
                f"total {tot:.6g}")
    return f"{kind} {raw['sender']} nonce {raw['nonce']}"
