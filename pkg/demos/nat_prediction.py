"""
Beating port randomisation through a per-destination NAT
=========================================================

The resolver randomises its source port, but it sits behind a NAT that
allocates external ports toward each destination sequentially.  A zombie
on the LAN opens a mapping to the name server; Oscar sprays spoofed probes
at every external port; the one that comes through tells the zombie which
port it got, and the resolver's next query will leave on that port + 1.
"""
from offpath import scenario_path
from offpath.harness import load_scenario, run_trial

sc = load_scenario(scenario_path("predict_then_poison"))
outcome, world = run_trial(sc, sc.seed)

for tick, key, port in world.nat.allocations:
    print(f"t={tick:2d}  {key.src} -> {key.dst} ({key.proto.value})  external port {port}")
print(f"predicted {outcome.recovered}; poisoned: {outcome.success}; "
      f"packets: {outcome.packets_sent} (2^16 probes + 2^16 referrals + 2 from the zombie)")

cached = world.resolver.lookup("ns.foo.com")
print(f"resolver now believes ns.foo.com is at {cached.address}")

# The same attack against a NAT that picks every port at random is a blind guess.
blind = (sc.with_value("topology.zombie.port", 40).with_value("port_bits", 8)
         .with_value("topology.nat.policy", "fully_random"))
wins = sum(run_trial(blind, s)[0].success for s in range(200))
print(f"fully random NAT, 8-bit ports: {wins}/200 successes (about 1/255 expected)")
