"""Orthogonal-experiment analysis on the published tuning runs.

Feeds the three experiments' accuracy columns through the L9/L16/full
factorial layouts and prints the range-analysis and ANOVA blocks.

Run: python demos/04_tuning_tables.py
"""

from rodfind import doe

# first screening: four factors, three levels each (L9)
first = doe.make_design("L9_3level", [
    doe.Factor("batch size", (16, 32, 64)),
    doe.Factor("learning rate", (0.001, 0.0001, 0.00001)),
    doe.Factor("epoch", (50, 100, 200)),
    doe.Factor("convolution layer number", (3, 4, 5))])
first_acc = [3.77, 64.77, 46.45, 30.00, 55.62, 69.38, 48.44, 71.09, 57.81]
ra = doe.range_analysis(first, first_acc)
print("L9 screening")
for factor, sums, r in zip(first.factors, ra.level_sums, ra.ranges):
    print(f"  T({factor.name}): {[round(s, 2) for s in sums]}   R = {r:.2f}")
print(f"  order {ra.order_string}; best {ra.best_combination}; "
      f"grand total {ra.grand_total:.2f}")

# confirmation experiment: two levels, full factorial
third = doe.make_design("full_factorial", [
    doe.Factor("learning rate", (0.00001, 0.000001)),
    doe.Factor("batch size", (4, 16)),
    doe.Factor("convolution layer number", (6, 7))])
third_acc = [91.67, 77.78, 98.30, 59.66, 96.67, 97.78, 94.89, 86.93]
ra3 = doe.range_analysis(third, third_acc)
print("\n2^3 confirmation")
print(f"  level means: {[[round(m, 2) for m in ms] for ms in ra3.level_means]}")
print(f"  delta {[round(d, 2) for d in ra3.deltas]}; order {ra3.order_string}; "
      f"best {ra3.best_combination}")

table = doe.anova(third, third_acc)
print("\n  ANOVA        df    adj SS    adj MS       F       p")
for row in table.factor_rows:
    print(f"  {row.name:<24.24s}{row.df:3d}  {row.ss:8.2f}  {row.ms:8.2f}"
          f"  {row.f:6.2f}  {row.p:6.3f}")
err, tot = table.error_row, table.total_row
print(f"  {'error':<24.24s}{err.df:3d}  {err.ss:8.2f}  {err.ms:8.2f}")
print(f"  {'total':<24.24s}{tot.df:3d}  {tot.ss:8.2f}")

# a mock tuning loop over an objective with a known optimum
design = doe.make_design("full_factorial", [
    doe.Factor("x", (0, 1)), doe.Factor("y", (0, 1)), doe.Factor("z", (0, 1))])
target = {"x": 1, "y": 0, "z": 1}
report = doe.run_tuning(design, lambda c: -sum(abs(c[k] - target[k]) for k in target))
print(f"\nmock objective: recommended {report.recommended} "
      f"(ran: {report.recommended_was_run})")
