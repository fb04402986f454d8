#  Copyright (c) 2025 Markus Ressel
#  .
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#  .
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#  .
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.
"""
RPC stack model: RX actors parse requests, stash payloads and steer request metadata to the
scheduling agent; workers read the payload when they start and write the response when done.
"""
import enum
import logging
from collections import Counter
from dataclasses import dataclass

from splitsim.const import CACHELINE_BYTES
from splitsim.errors import AgentCrash, BadConfig, DuplicateCompletion, InvariantViolation
from splitsim.fabric import Fabric, PteType, Side, Simulator
from splitsim.host_kernel import EventKind, HostKernel, KernelEvent, Thread
from splitsim.queues import LocalPort, MemoryPort, MmioPort, MessageQueue
from splitsim.util import ceil_div
from splitsim.wave_api import Enclave, WaveRuntime
from splitsim.workloads_metrics import Arrival, LatencyRecorder

LOGGER = logging.getLogger(__name__)


class PayloadLocation(enum.Enum):
    HOST_DRAM = "host"
    SOC_DRAM = "soc"


class Client(enum.Enum):
    LOAD = "load"
    LATENCY = "latency"


@dataclass
class RpcRequest:
    req_id: int
    client: Client
    kind: str
    service_ns: int
    slo_class: int
    payload_loc: PayloadLocation
    arrival: int
    payload_addr: int = None
    completed_at: int = None

    @property
    def latency(self) -> int or None:
        return None if self.completed_at is None else self.completed_at - self.arrival


@dataclass(frozen=True)
class RpcScenario:
    name: str
    sched_location: Side
    rpc_location: Side
    worker_cpus: int
    rpc_cpus: int
    payload_loc: PayloadLocation

    @property
    def agent_cpus(self) -> int:
        return 1 if self.sched_location is Side.HOST else 0

    @property
    def host_cpus(self) -> int:
        """
        :return: host cpus the deployment occupies
        """
        return self.worker_cpus + self.rpc_cpus + self.agent_cpus


SCENARIOS = {
    "onhost_all": RpcScenario("onhost_all", Side.HOST, Side.HOST, 15, 8, PayloadLocation.HOST_DRAM),
    "onhost_sched": RpcScenario("onhost_sched", Side.HOST, Side.IPU, 15, 0, PayloadLocation.SOC_DRAM),
    "offload_all": RpcScenario("offload_all", Side.IPU, Side.IPU, 16, 0, PayloadLocation.SOC_DRAM),
}


def find_rpc_scenario(name: str) -> RpcScenario:
    scenario = SCENARIOS.get(name)
    if scenario is None:
        raise BadConfig("Unknown RPC scenario '{}', expected one of: {}".format(name, ", ".join(SCENARIOS)))
    return scenario


class RxActor:
    """
    One RPC receive thread with its steering queue; requests are parsed in arrival order
    """

    def __init__(self, index: int, node_id, queue: MessageQueue, port: MemoryPort):
        self.index = index
        self.node_id = node_id
        self.queue = queue
        self.port = port
        self.free_at = 0
        self.parsed = 0


class RpcStack:

    def __init__(self, sim: Simulator, fabric: Fabric, wave: WaveRuntime, enclave: Enclave, kernel: HostKernel,
                 scenario: RpcScenario, agent_node, rx_actors: int = 8, parse_ns: int = 30_000,
                 payload_bytes: int = 256, payload_pte: PteType = PteType.WT, warmup: int = 0,
                 queue_capacity: int = 65536, payload_slots: int = 65536):
        """
        :param agent_node: node of the scheduling agent, it consumes the steering queues
        :param payload_pte: mapping workers use for SoC resident payloads
        :param warmup: completions of requests that arrived earlier are not recorded
        """
        self.sim = sim
        self.fabric = fabric
        self.wave = wave
        self.enclave = enclave
        self.kernel = kernel
        self.scenario = scenario
        self.parse_ns = parse_ns
        self.payload_bytes = payload_bytes
        self.payload_pte = payload_pte
        self.warmup = warmup
        self.recorders = {client: LatencyRecorder() for client in Client}
        self.requests = {}
        self.counters = Counter()
        self.offered = Counter()

        rx_side = scenario.rpc_location
        self.actors = []
        self.sources = []
        for i in range(rx_actors):
            node_id = "rx{}".format(i)
            fabric.add_node(node_id, rx_side)
            queue = wave.create_queue(enclave, "rpc.rx{}".format(i), capacity=queue_capacity, home=rx_side)
            self.actors.append(RxActor(i, node_id, queue, LocalPort(fabric, node_id, PteType.WB)))
            self.sources.append((queue, self._consumer_port(agent_node, rx_side)))

        self.payload_slots = payload_slots
        payload_home = Side.HOST if scenario.payload_loc is PayloadLocation.HOST_DRAM else Side.IPU
        self.payload_stride = ceil_div(payload_bytes, CACHELINE_BYTES) * CACHELINE_BYTES
        self.payload_base = wave.allocate(payload_slots * self.payload_stride)
        fabric.memory.map_region("rpc.payloads", self.payload_base, payload_slots * self.payload_stride,
                                 payload_home)

        kernel.on_claim = self.prefetch_payload
        kernel.on_thread_start = self.worker_read_payload
        kernel.on_thread_finish = self.worker_respond

    def _consumer_port(self, agent_node, queue_side: Side) -> MemoryPort:
        agent_side = self.fabric.nodes[agent_node].side
        if agent_side is Side.HOST and queue_side is Side.IPU:
            return MmioPort(self.fabric, agent_node, PteType.UC, PteType.UC)
        return LocalPort(self.fabric, agent_node, PteType.WB)

    def _payload_lines(self, req: RpcRequest) -> [int]:
        return [req.payload_addr + i * CACHELINE_BYTES for i in range(self.payload_stride // CACHELINE_BYTES)]

    def submit(self, arrival: Arrival, client: Client, req_id: int):
        """
        Schedules the arrival of one request
        """
        req = RpcRequest(req_id, client, arrival.kind, arrival.service_ns, arrival.slo_class,
                         self.scenario.payload_loc, arrival.time)
        self.sim.call_at(arrival.time, "net", "rpc_arrival", self.rpc_ingest, req)

    def rpc_ingest(self, req: RpcRequest):
        """
        Parses a request on its RX actor, stashes the payload and steers the metadata to the agent
        """
        if req.req_id in self.requests:
            raise InvariantViolation("Request {} was ingested twice".format(req.req_id))
        self.requests[req.req_id] = req
        if req.arrival >= self.warmup:
            self.offered[req.client] += 1
        actor = self.actors[req.req_id % len(self.actors)]
        t = max(self.sim.now(), actor.free_at) + self.parse_ns
        self.fabric.nodes[actor.node_id].charge(self.parse_ns, "rpc")

        req.payload_addr = self.payload_base + (req.req_id % self.payload_slots) * self.payload_stride
        for addr in self._payload_lines(req):
            cost, _ = actor.port.write(addr, req.req_id, CACHELINE_BYTES, t)
            t += cost

        thread = Thread(req.req_id, req.service_ns, arrival=req.arrival, slo_class=req.slo_class, kind=req.kind,
                        request=req)
        self.kernel.admit(thread, t, notify=False)
        event = KernelEvent(EventKind.CREATED, thread.tid, None, t, req.req_id, req.slo_class)
        if not self.kernel.fallback_active:
            try:
                result = actor.queue.enqueue(event, actor.port, t)
                t += result.cost
            except AgentCrash as ex:
                LOGGER.debug("Steering queue overflow: {}".format(ex))
                self.kernel.kill_agent(t)
        actor.free_at = t
        actor.parsed += 1
        self.counters["ingested"] += 1

    def prefetch_payload(self, thread: Thread, cpu: int, at: int) -> int:
        req = thread.request
        if req is None or req.payload_loc is not PayloadLocation.SOC_DRAM or self.payload_pte is not PteType.WT:
            return 0
        for addr in self._payload_lines(req):
            self.fabric.prefetch(cpu, addr, at)
        return 0

    def worker_read_payload(self, thread: Thread, cpu: int, at: int) -> int:
        """
        :return: cost of reading the payload before the service starts
        """
        req = thread.request
        if req is None:
            return 0
        if req.payload_loc is PayloadLocation.HOST_DRAM:
            return self.fabric.host_local_access(cpu, self.payload_bytes)
        t = at
        for addr in self._payload_lines(req):
            _, cost = self.fabric.mmio_read(cpu, addr, CACHELINE_BYTES, pte=self.payload_pte, at=t)
            t += cost
        self.counters["payload_read_ns"] += t - at
        return t - at

    def worker_respond(self, thread: Thread, cpu: int, at: int) -> int:
        """
        Writes the response and records the completion
        :return: cost of the response write
        """
        req = thread.request
        if req is None:
            return 0
        if req.payload_loc is PayloadLocation.HOST_DRAM:
            cost = self.fabric.host_local_access(cpu, self.payload_bytes)
        else:
            cost = 0
            for addr in self._payload_lines(req):
                cost += self.fabric.mmio_write(cpu, addr, -req.req_id, pte=PteType.WC, width=CACHELINE_BYTES,
                                               at=at + cost)
            cost += self.fabric.wc_flush(cpu, at + cost)
        self.rpc_respond(req, at + cost)
        return cost

    def rpc_respond(self, req: RpcRequest, at: int):
        if req.completed_at is not None:
            raise DuplicateCompletion("Request {} completed twice".format(req.req_id))
        req.completed_at = at
        self.counters["completed"] += 1
        if req.arrival >= self.warmup:
            self.recorders[req.client].record(req.kind, req.latency)

    def outstanding(self) -> int:
        return sum(1 for r in self.requests.values() if r.completed_at is None)
