"""Small topologies shared by the carrier and device tests."""

from imsspoof.ims_core import CarrierPolicy, Directory, ImsCore
from imsspoof.netsim import Fabric
from imsspoof.sip_codec import DeviceProfile
from imsspoof.ue import Device, default_routing_table

IMS_A = "2001:db8:1::5"
IMS_B = "2001:db8:2::5"


def key_for(number):
    return bytes.fromhex(number.rjust(16, "0")[-16:])


class Net:
    def __init__(self, policy_a=None, policy_b=None, seed=0):
        self.fabric = Fabric(seed=seed)
        self.directory = Directory()
        self.a = ImsCore(self.fabric, policy_a or CarrierPolicy("OP-I"), IMS_A, self.directory, seed)
        self.b = ImsCore(self.fabric, policy_b or CarrierPolicy("OP-II"), IMS_B, self.directory, seed)
        self.devices = {}
        self._n = 0

    def device(self, number, carrier=None, register=True, **kw):
        carrier = carrier or self.a
        self._n += 1
        carrier.add_subscriber(number, key_for(number))
        prefix = "2001:db8:1:100::" if carrier is self.a else "2001:db8:2:100::"
        profile = DeviceProfile(number, f"{prefix}{self._n:x}", carrier.address, key_for(number))
        dev = Device(self.fabric, profile, default_routing_table(carrier.address), self.directory.events, **kw)
        self.devices[number] = dev
        if register:
            dev.register()
            self.fabric.run_until(self.fabric.now + 1000)
        return dev

    def settle(self, ms=1000):
        self.fabric.run_until(self.fabric.now + ms)
