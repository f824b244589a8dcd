"""Reference agents: ReAct baseline, EvidenceLoop controller and scripted calibration agents."""

from .evidenceloop import LoopConfig, run_evidenceloop
from .memory import EvidenceMemory
from .react import run_react
from .scripted import run_ground_truth, run_refuse_all

__all__ = ["LoopConfig", "run_evidenceloop", "EvidenceMemory", "run_react", "run_ground_truth", "run_refuse_all"]
