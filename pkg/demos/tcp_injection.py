"""
Injecting into a TCP connection without seeing it
=================================================

1. A puppet script in the victim's browser sandwiches a connection to
   victim.com between two connections to Oscar's site.  Sequential client
   ports give away the one in the middle.
2. Oscar sprays one spoofed segment per receive window.  Exactly one is
   accepted; the puppet keeps reloading victim.com until the browser renders
   the marker page, and Oscar's web log tells him which segment landed.
3. With the tuple and the next sequence number known, a single spoofed
   segment is accepted as the server's next response.
"""
from offpath import scenario_path
from offpath.attacks import (find_connection_tuple, inject_data, attacker_page,
                             learn_sequence_number)
from offpath.harness import build_world, load_scenario

sc = load_scenario(scenario_path("end_to_end"))
world = build_world(sc, sc.seed)
oscar, puppet = world.oscar, world.puppet

found = find_connection_tuple(oscar, puppet, world.server_endpoint)
four = found.recovered
print(f"connection tuple: {four} (after {found.rounds} attempt)")

truth = world.client.connection(four)
nxt, report = learn_sequence_number(oscar, puppet, four, sc.params.wnd_size)
print(f"marker {report.index} rendered after {report.requests} requests; "
      f"next sequence {nxt} (client really expects {truth.rcv_nxt})")

inject_data(oscar, four, nxt, attacker_page())
puppet.request("http://victim.com/")
world.net.run()
last = world.client.browser.conns["victim.com"].delivered[-1]
print(f"browser received for {last.request.url}:")
print(last.body.decode())
print("Oscar's log:", [path for _, _, path in oscar.site.log][-3:])
