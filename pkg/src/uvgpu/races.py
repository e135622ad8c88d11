"""Happens-before race detection at wave granularity.

Agents are waves plus one asynchronous copy engine per wave.  Each agent
carries a vector clock; accesses record epochs (agent, tick) per 32-bit word.
Two accesses to the same word race when neither epoch is ordered before the
other agent's clock and at least one access writes.  Lanes of one wave never
race with each other: a whole instruction is one event.

Ordering edges:
  - program order within a wave,
  - workgroup barriers (join every live wave's clock),
  - release fence + later atomic write, observed by an atomic read on the
    same word and cashed in by a later acquire fence (scope applies),
  - async copy issue (wave -> engine) and waitasync (engine -> wave).

Atomic accesses never race with other atomics; they conflict with plain
reads and writes as both a read and a write.
"""
from __future__ import annotations

from dataclasses import dataclass

_SCOPE_RANK = {"wave": 0, "workgroup": 1, "device": 2, "system": 3}
_MAX_REPORTS = 64


@dataclass(frozen=True)
class AccessSite:
    workgroup: int
    wave: int
    pc: int
    mnemonic: str
    kind: str  # "read" | "write" | "atomic" | "async-write" | "async-read"

    def __str__(self):
        return (f"{self.kind} at pc {self.pc} ({self.mnemonic}) "
                f"by wave {self.wave} of workgroup {self.workgroup}")


@dataclass(frozen=True)
class RaceReport:
    space: str
    word_address: int
    first: AccessSite
    second: AccessSite
    suggestion: str

    def __str__(self):
        return (f"race on {self.space} word {self.word_address:#x}: "
                f"{self.first} vs {self.second}; {self.suggestion}")


def _join(dst: dict, src: dict):
    for k, v in src.items():
        if dst.get(k, 0) < v:
            dst[k] = v


class _Agent:
    __slots__ = ("vc", "release", "pending")

    def __init__(self):
        self.vc: dict = {}
        self.release = None       # (scope, vc snapshot) from last release fence
        self.pending: dict = {}   # (scope, src_wg) -> joined vc, via atomic reads

    def tick(self, key) -> int:
        t = self.vc.get(key, 0) + 1
        self.vc[key] = t
        return t


class _Word:
    __slots__ = ("write", "reads", "atomics", "pubs")

    def __init__(self):
        self.write = None    # (agent, tick, site)
        self.reads: dict = {}    # agent -> (tick, site)
        self.atomics: dict = {}  # agent -> (tick, site)
        self.pubs: dict = {}     # (scope, src_wg) -> joined release vc


class RaceDetector:
    def __init__(self):
        self._agents: dict = {}
        self._words: dict = {}
        self._seen: set = set()
        self.reports: list[RaceReport] = []

    def _agent(self, key) -> _Agent:
        a = self._agents.get(key)
        if a is None:
            a = self._agents[key] = _Agent()
        return a

    def _word(self, space_key, word) -> _Word:
        k = (space_key, word)
        s = self._words.get(k)
        if s is None:
            s = self._words[k] = _Word()
        return s

    def _report(self, space_key, word, old, new):
        if len(self.reports) >= _MAX_REPORTS:
            return
        a_site, b_site = old[2], new[2]
        key = (space_key, a_site.pc, b_site.pc, a_site.kind, b_site.kind)
        if key in self._seen:
            return
        self._seen.add(key)
        scope = ("workgroup" if a_site.workgroup == b_site.workgroup
                 else "device")
        space = (space_key[0] if space_key[0] == "device"
                 else f"scratch[{space_key[1]}]")
        self.reports.append(RaceReport(
            space=space, word_address=word * 4, first=a_site, second=b_site,
            suggestion=f"order the pair at {scope} scope "
                       f"(fence.release/acquire.{scope} around an atomic "
                       f"flag, or a barrier when one workgroup suffices)"))

    def _ordered(self, epoch, vc: dict) -> bool:
        return epoch[1] <= vc.get(epoch[0], 0)

    # ----------------------------------------------------------- events

    def on_mem(self, agent_key, wg: int, space_key, words, kind: str, site):
        """One memory instruction touching `words` (32-bit word indices)."""
        ag = self._agent(agent_key)
        t = ag.tick(agent_key)
        vc = ag.vc
        for word in words:
            st = self._word(space_key, int(word))
            if kind == "a":
                # acquire side: collect publications hanging off this word
                for pk, pvc in st.pubs.items():
                    cur = ag.pending.get(pk)
                    if cur is None:
                        ag.pending[pk] = dict(pvc)
                    else:
                        _join(cur, pvc)
                # release side: a prior release fence publishes through us
                if ag.release is not None:
                    scope, snap = ag.release
                    pk = (scope, wg)
                    cur = st.pubs.get(pk)
                    if cur is None:
                        st.pubs[pk] = dict(snap)
                    else:
                        _join(cur, snap)
                if st.write and not self._ordered(st.write, vc):
                    self._report(space_key, int(word), st.write,
                                 (agent_key, t, site))
                for rk, (rt, rsite) in st.reads.items():
                    if rt > vc.get(rk, 0):
                        self._report(space_key, int(word), (rk, rt, rsite),
                                     (agent_key, t, site))
                st.atomics[agent_key] = (t, site)
            elif kind == "r":
                if st.write and not self._ordered(st.write, vc):
                    self._report(space_key, int(word), st.write,
                                 (agent_key, t, site))
                for akf, (at, asite) in st.atomics.items():
                    if at > vc.get(akf, 0):
                        self._report(space_key, int(word), (akf, at, asite),
                                     (agent_key, t, site))
                st.reads[agent_key] = (t, site)
            else:  # "w"
                if st.write and not self._ordered(st.write, vc):
                    self._report(space_key, int(word), st.write,
                                 (agent_key, t, site))
                for rk, (rt, rsite) in st.reads.items():
                    if rt > vc.get(rk, 0):
                        self._report(space_key, int(word), (rk, rt, rsite),
                                     (agent_key, t, site))
                for akf, (at, asite) in st.atomics.items():
                    if at > vc.get(akf, 0):
                        self._report(space_key, int(word), (akf, at, asite),
                                     (agent_key, t, site))
                st.write = (agent_key, t, site)
                st.reads.clear()

    def on_fence(self, agent_key, order: str, scope: str, wg: int):
        ag = self._agent(agent_key)
        if order in ("acquire", "acqrel"):
            for (pscope, src_wg), pvc in ag.pending.items():
                eff = min(_SCOPE_RANK[pscope], _SCOPE_RANK[scope])
                if eff >= _SCOPE_RANK["device"] or (
                        eff == _SCOPE_RANK["workgroup"] and src_wg == wg):
                    _join(ag.vc, pvc)
            ag.pending.clear()
        if order in ("release", "acqrel"):
            ag.tick(agent_key)
            ag.release = (scope, dict(ag.vc))

    def on_barrier(self, agent_keys):
        joined: dict = {}
        for k in agent_keys:
            _join(joined, self._agent(k).vc)
        for k in agent_keys:
            ag = self._agents[k]
            ag.vc = dict(joined)
            ag.tick(k)

    def on_async_issue(self, agent_key, wg: int, scratch_key, scratch_words,
                       device_words, site):
        """Copy issue: engine inherits the wave's clock, then the copy's
        writes and reads are the engine's events (they overlap anything the
        wave does before the matching wait)."""
        ag = self._agent(agent_key)
        ag.tick(agent_key)
        ekey = ("async", agent_key)
        eng = self._agent(ekey)
        _join(eng.vc, ag.vc)
        wsite = AccessSite(site.workgroup, site.wave, site.pc, site.mnemonic,
                           "async-write")
        rsite = AccessSite(site.workgroup, site.wave, site.pc, site.mnemonic,
                           "async-read")
        self.on_mem(ekey, wg, scratch_key, scratch_words, "w", wsite)
        self.on_mem(ekey, wg, ("device",), device_words, "r", rsite)
        return dict(eng.vc)

    def on_async_complete(self, agent_key, token):
        if token:
            _join(self._agent(agent_key).vc, token)
