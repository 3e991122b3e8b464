"""leaklab: a desk-scale harness for split-leakage forensics in two-stage video-quality models.

The pipeline mirrors a classic no-reference VQA recipe: fine-tune a frame classifier on
MOS-interval classes, pool its hidden activations per video, regress MOS with an epsilon-SVR,
and score with PLCC/SROCC. The harness runs that pipeline under clean and leaky split
protocols so the inflation caused by each leak can be measured side by side.
"""

__all__ = ["__version__"]

__version__ = "0.1.0"
