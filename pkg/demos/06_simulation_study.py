"""A small Monte-Carlo study comparing penalty variants.

Twenty replications keep this quick; the acceptance suite runs 100 per
setting. Reported metrics: mean IMSE, mean supremum of the selected region
and percent bias of the two scalar coefficients.
"""
from funbuffer.simulate import ScenarioConfig, StudyConfig, run_study

study = StudyConfig(variants=("SplineGbridge", "Lasso", "Gbridge"))
report = run_study(ScenarioConfig("II", n=500, seed=3), study, n_reps=20)
print(f"{'variant':14s} {'IMSE':>6s} {'sup':>6s} {'bias1%':>7s} {'bias2%':>7s}")
for v, a in report.aggregates().items():
    print(f"{v:14s} {a['mean_imse']:6.3f} {a['mean_supremum']:6.3f} "
          f"{a['theta1_percent_bias']:7.2f} {a['theta2_percent_bias']:7.2f}")
