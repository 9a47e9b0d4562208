"""Mean-CE report for published models, with deltas against the standard model.

The values are the error scores published for five ImageNet models on two
halves of a corruption benchmark, plus two single-corruption columns. They are
fed in as an external table; nothing is trained.

    python demos/table1_report.py
"""
from overlapscore.analysis import CEReport

PUBLISHED = """model,mean_CE_Set1,mean_CE_Set2,Border,Obstr
Standard,81,73,53,63
SIN+IN,71,68,56,69
Augmix,66,65,50,63
ANT3x3,60,68,58,71
DeepAug,59,63,60,72
"""

if __name__ == "__main__":
    report = CEReport.from_csv(PUBLISHED, standard="Standard", delta_columns=["mean_CE_Set1", "mean_CE_Set2"])
    print(report.to_text())
    best = min(report.values, key=lambda m: report.values[m]["mean_CE_Set1"])
    print(f"largest set-1 gain: {best}, {report.cell(best, 'mean_CE_Set1')}")
