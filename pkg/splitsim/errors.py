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


class ConfigError(ValueError):
    """
    Raised for invalid configuration or command line input
    """
    pass


class BadConfig(ConfigError):
    pass


class UnknownKey(ConfigError):

    def __init__(self, key: str):
        super().__init__("Unknown config key '{}'".format(key))
        self.key = key


class ScenarioNotFound(ConfigError):

    def __init__(self, path: str):
        super().__init__("Scenario file not found: '{}'".format(path))
        self.path = path


class SimulationError(RuntimeError):
    """
    Raised when the simulated system breaks one of its invariants
    """
    pass


class PastEvent(SimulationError):
    pass


class UnmappedAddress(SimulationError):

    def __init__(self, addr: int):
        super().__init__("Address is not mapped: {:#x}".format(addr))
        self.addr = addr


class BadVector(SimulationError):
    pass


class ZeroLength(SimulationError):
    pass


class EntryTooLarge(SimulationError):
    pass


class SlotBusy(SimulationError):
    pass


class BadState(SimulationError):
    pass


class EnclaveViolation(SimulationError):
    pass


class AlreadyRegistered(SimulationError):
    pass


class UnknownOpcode(SimulationError):
    pass


class LifecycleViolation(SimulationError):
    pass


class DuplicateCompletion(SimulationError):
    pass


class InvariantViolation(SimulationError):
    pass


class AgentCrash(SimulationError):
    """
    Raised by a producer that finds its ring full; the agent owning the ring is considered crashed
    """
    pass


class NoDecision(LookupError):
    """
    The transaction slot of a CPU holds no claimable decision
    """

    def __init__(self, cpu: int, cost: int = 0):
        super().__init__("No decision staged for cpu {}".format(cpu))
        self.cpu = cpu
        self.cost = cost


class NoSamples(LookupError):

    def __init__(self, name: str):
        super().__init__("No samples recorded for class '{}'".format(name))
        self.name = name


class NeverSaturates(ValueError):
    pass
