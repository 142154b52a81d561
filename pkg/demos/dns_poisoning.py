"""
Kaminsky poisoning, with and without source-port randomisation
================================================================

A resolver that always queries from port 53 only has its TXID to hide
behind.  With 8-bit TXIDs a flood of 256 spoofed referrals covers every
possibility; smaller floods win with probability k / 2**8 per round.
"""
from offpath import scenario_path
from offpath.harness import load_scenario, run_scenario, sweep
from offpath.harness.stats import geometric_cdf

base = load_scenario(scenario_path("kaminsky"))

# One round per trial: the success rate should track k / 256.
for k, report in sweep(base, "guesses_per_round", [16, 64, 128, 256], trials=400):
    agg = report.aggregates
    print(f"k={k:4d}  success={agg['success_rate']:.3f}  expected={k / 256:.3f}  "
          f"ci95=[{agg['ci_low']:.3f}, {agg['ci_high']:.3f}]")

# Several rounds: each round poisons a fresh random subdomain, so rounds are
# independent tries and success-by-round follows a geometric law.
rounds = base.with_value("guesses_per_round", 32).with_value("max_rounds", 8)
rows = run_scenario(rounds, trials=2000).rows
for r in (1, 2, 4, 8):
    seen = sum(row.success and row.rounds <= r for row in rows) / len(rows)
    print(f"by round {r}: {seen:.3f}  (1-(1-p)^r = {geometric_cdf(32 / 256, r):.3f})")

# Now the resolver picks a random source port from 2**8.  The same flood is
# spread over (TXID, port) pairs and the per-packet odds drop to 2**-20.
spr = load_scenario(scenario_path("kaminsky_spr"))
agg = run_scenario(spr, trials=2000).aggregates
print(f"SPR: {agg['successes']} wins in {agg['total_packets']} spoofed packets "
      f"-> {agg['successes'] / agg['total_packets']:.2e} per packet (2^-20 = {2**-20:.2e})")
