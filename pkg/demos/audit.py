"""Drift and contraction audits of both builtin models."""
from mvx import example1, example2
from mvx.experiments import verify_reports

for name, (spec, lyap) in (("example1", example1()), ("example2", example2())):
    print(f"== {name}")
    for report in verify_reports(spec, lyap, probes=1000):
        print(report.to_text())
